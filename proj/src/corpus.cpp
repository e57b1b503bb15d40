#include "seglm/corpus.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

namespace seglm {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        default: return "test";
    }
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "valid") return Split::valid;
    if (name == "test") return Split::test;
    throw CorpusError("unknown split: " + name);
}

std::size_t Corpus::split_begin(Split s) const {
    switch (s) {
        case Split::train: return 0;
        case Split::valid: return train_end;
        default: return valid_end;
    }
}

std::size_t Corpus::split_end(Split s) const {
    switch (s) {
        case Split::train: return train_end;
        case Split::valid: return valid_end;
        default: return bytes.size();
    }
}

std::vector<std::uint8_t> synthesize_text(std::size_t target_bytes, std::uint64_t seed) {
    Rng rng(seed);

    // deterministic word list from syllable products
    static const char* starts[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"};
    static const char* mids[] = {"a", "e", "i", "o", "u", "ar", "en", "il", "or", "un"};
    static const char* ends[] = {"", "n", "s", "t", "r", "l", "d"};
    std::vector<std::string> words;
    for (const char* a : starts)
        for (const char* b : mids)
            for (const char* c : ends) words.push_back(std::string(a) + b + c);

    std::vector<std::uint8_t> out;
    out.reserve(target_bytes + 128);
    std::vector<std::string> history;
    std::size_t sentences_in_paragraph = 0;

    const auto emit = [&](const std::string& sentence) {
        for (char ch : sentence) out.push_back(static_cast<std::uint8_t>(ch));
        ++sentences_in_paragraph;
        if (sentences_in_paragraph >= 8 + static_cast<std::size_t>(rng.uniform_int(0, 7))) {
            out.push_back('\n');
            out.push_back('\n');
            sentences_in_paragraph = 0;
        } else {
            out.push_back(' ');
        }
    };

    while (out.size() < target_bytes) {
        std::string sentence;
        if (history.size() >= 12 && rng.uniform() < 0.35) {
            // verbatim repeat from a few sentences back (roughly 100-600 bytes)
            const std::size_t back = static_cast<std::size_t>(rng.uniform_int(3, 10));
            sentence = history[history.size() - back];
        } else {
            const int len = static_cast<int>(rng.uniform_int(6, 12));
            for (int i = 0; i < len; ++i) {
                if (i) sentence += ' ';
                sentence += words[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - 1))];
            }
            sentence += '.';
        }
        history.push_back(sentence);
        if (history.size() > 64) history.erase(history.begin());
        emit(sentence);
    }
    out.resize(target_bytes);
    return out;
}

double order0_entropy_bits(const std::vector<std::uint8_t>& bytes) {
    if (bytes.empty()) return 0.0;
    std::array<std::size_t, 256> counts{};
    for (std::uint8_t b : bytes) ++counts[b];
    double h = 0.0;
    const double total = static_cast<double>(bytes.size());
    for (std::size_t count : counts) {
        if (!count) continue;
        const double p = static_cast<double>(count) / total;
        h -= p * std::log2(p);
    }
    return h;
}

Corpus load_corpus(const std::string& spec, std::int64_t n) {
    Corpus corpus;
    if (spec.rfind("synth:", 0) == 0) {
        std::size_t bytes = 0;
        std::uint64_t seed = 1;
        const std::string rest = spec.substr(6);
        const std::size_t colon = rest.find(':');
        try {
            bytes = static_cast<std::size_t>(std::stoull(rest.substr(0, colon)));
            if (colon != std::string::npos) seed = std::stoull(rest.substr(colon + 1));
        } catch (const std::exception&) {
            throw CorpusError("malformed synth spec: " + spec);
        }
        corpus.bytes = synthesize_text(bytes, seed);
    } else {
        std::ifstream in(spec, std::ios::binary);
        if (!in) throw CorpusError("cannot open corpus file: " + spec);
        corpus.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    const std::size_t total = corpus.bytes.size();
    corpus.train_end = total * 90 / 100;
    corpus.valid_end = total * 95 / 100;

    for (Split s : {Split::train, Split::valid, Split::test}) {
        const std::size_t len = corpus.split_end(s) - corpus.split_begin(s);
        if (len < static_cast<std::size_t>(n + 1))
            throw CorpusError(std::string("split ") + split_name(s) + " too short: " +
                              std::to_string(len) + " bytes, need at least " +
                              std::to_string(n + 1));
    }
    return corpus;
}

WindowBatcher::WindowBatcher(const Corpus& corpus, Split split, std::int64_t n, std::uint64_t seed)
    : corpus_(&corpus), begin_(corpus.split_begin(split)), n_(n), rng_(seed) {
    const std::size_t len = corpus.split_end(split) - begin_;
    if (len < static_cast<std::size_t>(n + 1))
        throw CorpusError("split too short for one window");
    const std::size_t count = (len - 1) / static_cast<std::size_t>(n);
    order_.resize(count);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle();
}

void WindowBatcher::shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(
            rng_.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order_[i - 1], order_[j]);
    }
}

void WindowBatcher::fill(std::size_t start, std::vector<std::int32_t>& input,
                         std::vector<std::int32_t>& target) const {
    input.resize(static_cast<std::size_t>(n_));
    target.resize(static_cast<std::size_t>(n_));
    const std::uint8_t* base = corpus_->bytes.data() + start;
    for (std::int64_t i = 0; i < n_; ++i) {
        input[static_cast<std::size_t>(i)] = base[i];
        target[static_cast<std::size_t>(i)] = base[i + 1];
    }
}

void WindowBatcher::next(std::vector<std::int32_t>& input, std::vector<std::int32_t>& target) {
    if (cursor_ >= order_.size()) {
        cursor_ = 0;
        shuffle();
    }
    const std::size_t window = order_[cursor_++];
    fill(begin_ + window * static_cast<std::size_t>(n_), input, target);
}

void WindowBatcher::window_at(std::int64_t index, std::vector<std::int32_t>& input,
                              std::vector<std::int32_t>& target) const {
    fill(begin_ + static_cast<std::size_t>(index) * static_cast<std::size_t>(n_), input, target);
}

}  // namespace seglm
