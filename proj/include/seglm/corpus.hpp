#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seglm/config.hpp"
#include "seglm/rng.hpp"

namespace seglm {

struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Split { train, valid, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

// Byte corpus with ordered, disjoint train/valid/test ranges.
struct Corpus {
    std::vector<std::uint8_t> bytes;
    std::size_t train_end = 0;  // train = [0, train_end)
    std::size_t valid_end = 0;  // valid = [train_end, valid_end), test = rest

    std::size_t split_begin(Split s) const;
    std::size_t split_end(Split s) const;
};

// `spec` is either a file path or synth:<bytes>[:<seed>] for the built-in
// generator. Splits are 90/5/5. Each split must hold at least n+1 bytes.
Corpus load_corpus(const std::string& spec, std::int64_t n);

// Deterministic English-like filler with verbatim sentence repeats a few
// hundred bytes apart, so context beyond the sliding window carries signal.
std::vector<std::uint8_t> synthesize_text(std::size_t bytes, std::uint64_t seed);

// Order-0 entropy of the byte distribution, in bits per byte.
double order0_entropy_bits(const std::vector<std::uint8_t>& bytes);

// Contiguous (input, target) windows of n+1 bytes at stride n, target shifted
// by one. Epochs visit every window exactly once in a seed-determined order.
class WindowBatcher {
public:
    WindowBatcher(const Corpus& corpus, Split split, std::int64_t n, std::uint64_t seed);

    std::int64_t windows_per_epoch() const { return static_cast<std::int64_t>(order_.size()); }

    // Fills the next window, reshuffling at epoch boundaries.
    void next(std::vector<std::int32_t>& input, std::vector<std::int32_t>& target);

    // Window in epoch order (for evaluation), no shuffling.
    void window_at(std::int64_t index, std::vector<std::int32_t>& input,
                   std::vector<std::int32_t>& target) const;

private:
    void fill(std::size_t start, std::vector<std::int32_t>& input,
              std::vector<std::int32_t>& target) const;
    void shuffle();

    const Corpus* corpus_;
    std::size_t begin_;
    std::int64_t n_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    Rng rng_;
};

}  // namespace seglm
