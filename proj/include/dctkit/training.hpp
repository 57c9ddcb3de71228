#pragma once

#include "datasets.hpp"
#include "errors.hpp"
#include "gradcheck.hpp"
#include "network.hpp"
#include "params.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

namespace dctkit {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4; // L2 term added to the gradient
};

/// Adam over every trainable parameter of a store, moments kept per parameter in store order.
template <typename T>
class Adam {
public:
    explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

    void step(ParamStore<T>& store, double lr) {
        if (m_.empty()) {
            for (const auto& p : store) {
                m_.emplace_back(p.value.rows(), p.value.cols());
                v_.emplace_back(p.value.rows(), p.value.cols());
            }
        }
        ++steps_;
        const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(steps_));
        std::size_t idx = 0;
        for (auto& p : store) {
            auto& m = m_[idx];
            auto& v = v_[idx];
            ++idx;
            if (!p.trainable) {
                continue;
            }
            for (std::size_t e = 0; e < p.value.size(); ++e) {
                const double g = static_cast<double>(p.grad[e]) + opt_.weight_decay * static_cast<double>(p.value[e]);
                m[e] = static_cast<T>(opt_.beta1 * m[e] + (1.0 - opt_.beta1) * g);
                v[e] = static_cast<T>(opt_.beta2 * v[e] + (1.0 - opt_.beta2) * g * g);
                const double mhat = m[e] / c1;
                const double vhat = v[e] / c2;
                p.value[e] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + opt_.eps));
            }
        }
    }

    const AdamOptions& options() const noexcept { return opt_; }

private:
    AdamOptions opt_;
    std::vector<DenseMatrix<T>> m_;
    std::vector<DenseMatrix<T>> v_;
    std::size_t steps_ = 0;
};

struct DatasetSpec {
    std::string shape = "plane+sphere";
    std::size_t points = 256;
    std::size_t clouds = 1;
};

template <typename T>
std::vector<PointCloud<T>> make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    std::vector<PointCloud<T>> out;
    for (std::size_t c = 0; c < spec.clouds; ++c) {
        out.push_back(gen_synthetic<T>(spec.shape, spec.points, child_seed(seed, "cloud" + std::to_string(c))));
    }
    return out;
}

struct TrainOptions {
    std::size_t epochs = 200;
    AdamOptions adam;
    bool cosine = false;
    bool recalibrate = true; // reset running statistics to the final weights' per-cloud averages
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0;
    double accuracy = 0;
    double lr = 0;
};

class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(const std::string& what, std::vector<EpochMetrics> history)
        : NumericError(what), history_(std::move(history)) {}
    const std::vector<EpochMetrics>& history() const noexcept { return history_; }

private:
    std::vector<EpochMetrics> history_;
};

inline void write_metrics_csv(const std::vector<EpochMetrics>& history, std::ostream& os) {
    os << "epoch,loss,accuracy,lr\n";
    for (const auto& m : history) {
        os << m.epoch << ',' << m.loss << ',' << m.accuracy << ',' << m.lr << '\n';
    }
}

/**
 * Replaces every running statistic with the mean over `data` of the per-cloud batch
 * statistic at the current weights. Training-mode forwards never read the running
 * values, so each cloud's batch statistic is recovered exactly from one update.
 */
template <typename T>
void recalibrate_statistics(Network<T>& net, const std::vector<PointCloud<T>>& data) {
    const double m = NormOptions{}.momentum;
    std::vector<std::vector<double>> sums;
    for (const auto& cloud : data) {
        std::vector<DenseMatrix<T>> before;
        for (const auto& p : net.params()) {
            if (!p.trainable) {
                before.push_back(p.value);
            }
        }
        (void)net.predict(cloud, Mode::train);
        std::size_t b = 0;
        for (auto& p : net.params()) {
            if (p.trainable) {
                continue;
            }
            if (sums.size() <= b) {
                sums.emplace_back(p.value.size(), 0.0);
            }
            for (std::size_t e = 0; e < p.value.size(); ++e) {
                const double old = static_cast<double>(before[b][e]);
                sums[b][e] += (static_cast<double>(p.value[e]) - m * old) / (1.0 - m);
            }
            p.value = before[b];
            ++b;
        }
    }
    std::size_t b = 0;
    for (auto& p : net.params()) {
        if (!p.trainable) {
            for (std::size_t e = 0; e < p.value.size(); ++e) {
                p.value[e] = static_cast<T>(sums[b][e] / static_cast<double>(data.size()));
            }
            ++b;
        }
    }
}

/**
 * One Adam step per cloud per epoch, batch size 1. Loss and accuracy are those of the
 * training-mode forward that produced each step's gradient, averaged over clouds.
 */
template <typename T>
std::vector<EpochMetrics> train(Network<T>& net, const std::vector<PointCloud<T>>& data, const TrainOptions& opt) {
    Adam<T> adam(opt.adam);
    std::vector<EpochMetrics> history;
    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        double lr = opt.adam.lr;
        if (opt.cosine && opt.epochs > 1) {
            lr = 0.5 * opt.adam.lr *
                 (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch - 1) / static_cast<double>(opt.epochs)));
        }
        EpochMetrics m{epoch, 0.0, 0.0, lr};
        std::size_t correct = 0;
        std::size_t total = 0;
        for (const auto& cloud : data) {
            net.params().zero_grad();
            Tape<T> t;
            typename Network<T>::ForwardOut f;
            Var loss;
            try {
                f = net.forward(t, cloud, Mode::train);
                loss = ag::cross_entropy(t, f.logits, *cloud.labels);
                t.backward(loss);
            } catch (const NumericError& e) {
                throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(),
                                       history);
            }
            const double lv = static_cast<double>(t.value(loss)[0]);
            const auto pred = argmax_rows(t.value(f.logits));
            for (std::size_t i = 0; i < pred.size(); ++i) {
                correct += pred[i] == (*cloud.labels)[i];
            }
            total += pred.size();
            m.loss += lv;
            adam.step(net.params(), lr);
        }
        m.loss /= static_cast<double>(data.size());
        m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
        history.push_back(m);
    }
    if (opt.recalibrate) {
        recalibrate_statistics(net, data);
    }
    return history;
}

template <typename T>
struct ToyRun {
    std::vector<EpochMetrics> history;
    Network<T> net;
    std::vector<PointCloud<T>> data;
};

/// Trains a fresh network on a synthetic dataset. Data and parameters derive from `seed`.
template <typename T>
ToyRun<T> train_toy(const DatasetSpec& spec, NetConfig config, const TrainOptions& opt, std::uint64_t seed) {
    config.num_classes = synthetic_classes(spec.shape);
    config.in_channels = 3;
    auto data = make_dataset<T>(spec, child_seed(seed, "data"));
    Network<T> net(config, child_seed(seed, "params"));
    auto history = train(net, data, opt);
    return {std::move(history), std::move(net), std::move(data)};
}

/// Default network for the synthetic training task.
inline NetConfig toy_config() {
    NetConfig c;
    c.stages = 1;
    c.dims = {16};
    c.k_density = 16;
    c.k_pool = 16;
    return c;
}

/// The small configuration used for gradient verification.
inline NetConfig tiny_config(Ablation ablation = {}) {
    NetConfig c;
    c.stages = 2;
    c.dims = {8, 8};
    c.k_density = 16;
    c.k_pool = 8;
    c.num_classes = synthetic_classes("airplane-toy");
    c.ablation = ablation;
    return c;
}

/// Full-network gradient check in 64-bit on a labelled synthetic cloud.
inline GradcheckReport gradcheck_network(const NetConfig& config, std::uint64_t seed, std::size_t points = 32,
                                         double h = 1e-5, double tolerance = 1e-4) {
    NetConfig c = config;
    c.in_channels = 3;
    c.num_classes = synthetic_classes("airplane-toy");
    Network<double> net(c, child_seed(seed, "params"));
    const auto cloud = gen_synthetic<double>("airplane-toy", points, child_seed(seed, "data"));
    return gradcheck(
        net.params(), [&](Tape<double>& t) { return net.loss(t, cloud, Mode::train); }, h, tolerance);
}

/// All 2^5 switch settings times the three upsampling modes.
inline std::vector<Ablation> all_ablations() {
    std::vector<Ablation> out;
    for (unsigned bits = 0; bits < 32; ++bits) {
        for (auto mode : {UpsampleMode::cluster, UpsampleMode::nearest, UpsampleMode::idw3}) {
            Ablation a;
            a.use_fps = bits & 1u;
            a.use_knn_pool = bits & 2u;
            a.no_cross_attn = bits & 4u;
            a.no_psa = bits & 8u;
            a.no_csa = bits & 16u;
            a.upsample = mode;
            out.push_back(a);
        }
    }
    return out;
}

struct AblationVariant {
    std::string name;
    Ablation ablation;
};

/// The seven single-change variants plus the full model.
inline std::vector<AblationVariant> table_variants() {
    std::vector<AblationVariant> v;
    auto with = [&](std::string name, auto&& edit) {
        Ablation a;
        edit(a);
        v.push_back({std::move(name), a});
    };
    with("fps", [](Ablation& a) { a.use_fps = true; });
    with("knn+mlp", [](Ablation& a) {
        a.use_knn_pool = true;
        a.upsample = UpsampleMode::idw3;
    });
    with("-cross-attention", [](Ablation& a) { a.no_cross_attn = true; });
    with("-csa", [](Ablation& a) { a.no_csa = true; });
    with("-psa", [](Ablation& a) { a.no_psa = true; });
    with("trilinear(idw3)", [](Ablation& a) { a.upsample = UpsampleMode::idw3; });
    with("nearest", [](Ablation& a) { a.upsample = UpsampleMode::nearest; });
    with("full", [](Ablation&) {});
    return v;
}

inline std::string describe(const Ablation& a) {
    std::string s;
    auto flag = [&](bool on, const char* name) {
        if (on) {
            s += s.empty() ? "" : "+";
            s += name;
        }
    };
    flag(a.use_fps, "fps");
    flag(a.use_knn_pool, "knn_pool");
    flag(a.no_cross_attn, "no_cross_attn");
    flag(a.no_psa, "no_psa");
    flag(a.no_csa, "no_csa");
    s += s.empty() ? "" : "+";
    s += std::string("up=") + to_string(a.upsample);
    return s;
}

} // namespace dctkit
