#pragma once

#include "params.hpp"
#include "tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace dctkit {

struct ParamCheck {
    std::string name;
    std::size_t entries = 0;
    std::size_t one_sided = 0; // entries checked with a one-sided stencil
    std::size_t skipped = 0;   // entries where both sides left the base branch
    double max_rel_error = 0.0; // |g_analytic - g_fd| / max(1, |g_fd|) over compared entries
    bool finite = true;
    bool passed = true;
};

struct GradcheckReport {
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = true;

    std::size_t entries() const {
        std::size_t n = 0;
        for (const auto& p : params) {
            n += p.entries;
        }
        return n;
    }
    std::size_t one_sided() const {
        std::size_t n = 0;
        for (const auto& p : params) {
            n += p.one_sided;
        }
        return n;
    }
    std::size_t skipped() const {
        std::size_t n = 0;
        for (const auto& p : params) {
            n += p.skipped;
        }
        return n;
    }

    const ParamCheck* worst() const {
        const ParamCheck* w = nullptr;
        for (const auto& p : params) {
            if (w == nullptr || p.max_rel_error > w->max_rel_error) {
                w = &p;
            }
        }
        return w;
    }
};

inline void print_report(std::ostream& os, const GradcheckReport& r) {
    os << "parameter,entries,one_sided,skipped,max_rel_error,status\n";
    for (const auto& p : r.params) {
        os << p.name << ',' << p.entries << ',' << p.one_sided << ',' << p.skipped << ',';
        if (p.finite) {
            os << p.max_rel_error;
        } else {
            os << "nonfinite";
        }
        os << ',' << (p.passed ? "PASS" : "FAIL") << '\n';
    }
}

/**
 * @brief Compares tape gradients against central finite differences.
 *
 * `loss` records a scalar on the tape it is given and must be a deterministic
 * function of the trainable values in `store`. Non-trainable entries (running
 * statistics) are restored after every evaluation so that the perturbed
 * forwards all see the same buffers.
 *
 * The tape's branch signature records every piecewise decision (ReLU masks,
 * max-pool winners, sampled indices, cluster assignments). When one of the +-h
 * evaluations lands on a different branch than the unperturbed forward, the
 * entry is checked with the second-order one-sided stencil on the side that
 * stays on the base branch, whose derivative is the one backward computes. If
 * both sides leave the branch the entry is skipped. A parameter with every entry
 * skipped fails.
 */
template <typename LossFn>
GradcheckReport gradcheck(ParamStore<double>& store, LossFn&& loss, double h = 1e-5, double tolerance = 1e-4) {
    std::vector<DenseMatrix<double>> buffers;
    for (const auto& p : store) {
        if (!p.trainable) {
            buffers.push_back(p.value);
        }
    }
    auto restore = [&] {
        std::size_t b = 0;
        for (auto& p : store) {
            if (!p.trainable) {
                p.value = buffers[b++];
            }
        }
    };
    auto evaluate = [&](std::uint64_t& branch) -> double {
        Tape<double> t;
        const double v = t.value(loss(t))[0];
        branch = t.branch_signature();
        restore();
        return v;
    };

    store.zero_grad();
    std::uint64_t base_branch = 0;
    double base_value = 0;
    {
        Tape<double> t;
        Var root = loss(t);
        base_value = t.value(root)[0];
        t.backward(root);
        base_branch = t.branch_signature();
    }
    restore();

    GradcheckReport report;
    report.tolerance = tolerance;
    for (auto& p : store) {
        if (!p.trainable) {
            continue;
        }
        ParamCheck check{p.name, p.value.size()};
        for (std::size_t e = 0; e < p.value.size(); ++e) {
            const double analytic = p.grad[e];
            const double saved = p.value[e];
            auto at = [&](double offset, std::uint64_t& branch) {
                p.value[e] = saved + offset;
                const double v = evaluate(branch);
                p.value[e] = saved;
                return v;
            };
            std::uint64_t plus_branch = 0;
            std::uint64_t minus_branch = 0;
            const double plus = at(h, plus_branch);
            const double minus = at(-h, minus_branch);
            double fd = (plus - minus) / (2.0 * h);
            if (plus_branch != base_branch || minus_branch != base_branch) {
                const bool use_minus = minus_branch == base_branch;
                if (!use_minus && plus_branch != base_branch) {
                    ++check.skipped;
                    continue;
                }
                const double dir = use_minus ? -1.0 : 1.0;
                std::uint64_t far_branch = 0;
                const double far = at(2.0 * dir * h, far_branch);
                if (far_branch != base_branch) {
                    ++check.skipped;
                    continue;
                }
                const double near = use_minus ? minus : plus;
                fd = dir * (-3.0 * base_value + 4.0 * near - far) / (2.0 * h);
                ++check.one_sided;
            }
            if (!std::isfinite(analytic) || !std::isfinite(fd)) {
                check.finite = false;
                check.max_rel_error = std::numeric_limits<double>::infinity();
                continue;
            }
            const double rel = std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
            check.max_rel_error = std::max(check.max_rel_error, rel);
        }
        check.passed = check.finite && check.max_rel_error < tolerance && check.skipped < check.entries;
        report.passed = report.passed && check.passed;
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.params.push_back(std::move(check));
    }
    return report;
}

} // namespace dctkit
