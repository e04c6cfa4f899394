// Synthetic-corpus evaluation: risk separation, ASR proxy and token flips for
// the adaptive and binary steering modes.

#include <cstdio>

#include "ras/harness.hpp"

int main() {
    using namespace ras;
    const auto corpus = harness::gen_corpus({});
    for (auto mode : {steering::SteeringMode::Adaptive, steering::SteeringMode::Binary}) {
        harness::EvalOptions opt;
        opt.mode = mode;
        const auto rep = harness::evaluate(corpus, opt);
        std::printf("%-9s s_base %.4f alpha %.3f | mean risk safe %.3f unsafe %.3f | ASR unsteered %.3f steered %.3f | "
                    "safe flips %.3f\n",
                    steering::to_string(mode), rep.params.s_base, rep.params.alpha, rep.mean_risk_safe,
                    rep.mean_risk_unsafe, rep.asr_unsafe_unsteered, rep.asr_unsafe_steered, rep.safe_flip_rate);
    }
}
