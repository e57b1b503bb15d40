#include "seglm/oracle.hpp"

#include "seglm/rng.hpp"

namespace seglm::oracle {

GradCheckReport grad_check(const ModelConfig& cfg_in, std::uint64_t seed, double tolerance,
                           std::int64_t sample_cap, const std::string& corrupt_param) {
    const ModelConfig cfg = validate(cfg_in);
    LanguageModel<double> model = make_model<double>(cfg);
    init_model(model, seed);

    Rng rng(seed + 0x517cc1b727220a95ull);
    std::vector<std::int32_t> tokens(static_cast<std::size_t>(cfg.n));
    std::vector<std::int32_t> targets(static_cast<std::size_t>(cfg.n));
    for (auto& t : tokens) t = static_cast<std::int32_t>(rng.uniform_int(0, cfg.vocab - 1));
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.uniform_int(0, cfg.vocab - 1));

    std::vector<std::vector<SegmentSelection>> selections;
    ForwardOptions record;
    record.record_selections = &selections;
    ForwardActs<double> acts;
    forward<double>(tokens, model, acts, record);

    LanguageModel<double> grads = make_model<double>(cfg);
    Mat<double> d_logits = loss_backward(acts.logits, std::span<const std::int32_t>(targets));
    backward(d_logits, model, acts, grads);

    if (!corrupt_param.empty()) {
        visit_params(grads, [&](const std::string& name, Mat<double>& g) {
            if (name == corrupt_param)
                for (idx i = 0; i < g.size(); ++i) g.data()[i] += 0.01;
        });
    }

    ForwardOptions pinned;
    pinned.pinned_selections = &selections;
    ForwardActs<double> probe_acts;
    const auto eval_loss = [&]() {
        forward<double>(tokens, model, probe_acts, pinned);
        return loss_and_metrics(probe_acts.logits, std::span<const std::int32_t>(targets))
            .cross_entropy_nats;
    };

    struct Slot {
        std::string name;
        Mat<double>* weight;
        Mat<double>* grad;
    };
    std::vector<Slot> slots;
    visit_params(model, [&](const std::string& name, Mat<double>& w) {
        slots.push_back({name, &w, nullptr});
    });
    std::size_t cursor = 0;
    visit_params(grads, [&](const std::string&, Mat<double>& g) {
        slots[cursor++].grad = &g;
    });

    const double step = 1e-4;
    Rng sampler(seed + 0x2545f4914f6cdd1dull);
    GradCheckReport report;
    for (const Slot& slot : slots) {
        const idx total = slot.weight->size();
        std::vector<idx> indices;
        if (total <= sample_cap) {
            indices.resize(static_cast<std::size_t>(total));
            for (idx i = 0; i < total; ++i) indices[static_cast<std::size_t>(i)] = i;
        } else {
            indices.resize(static_cast<std::size_t>(sample_cap));
            for (auto& i : indices) i = sampler.uniform_int(0, total - 1);
        }

        GradCheckEntry entry;
        entry.name = slot.name;
        entry.checked = static_cast<std::int64_t>(indices.size());
        double a2 = 0.0, n2 = 0.0, diff2 = 0.0;
        for (idx i : indices) {
            double* value = slot.weight->data() + i;
            const double saved = *value;
            *value = saved + step;
            const double up = eval_loss();
            *value = saved - step;
            const double down = eval_loss();
            *value = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = slot.grad->data()[i];
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            diff2 += (analytic - numeric) * (analytic - numeric);
            entry.max_abs_diff = std::max(entry.max_abs_diff, std::abs(analytic - numeric));
        }
        const double denom = std::sqrt(a2) + std::sqrt(n2);
        entry.rel_err = denom < 1e-10 ? 0.0 : std::sqrt(diff2) / denom;
        if (entry.rel_err > report.max_rel_err) {
            report.max_rel_err = entry.rel_err;
            report.worst_param = entry.name;
        }
        report.params.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

}  // namespace seglm::oracle
