#pragma once

#include "attention.hpp"
#include "clustering.hpp"
#include "errors.hpp"
#include "layers.hpp"
#include "matrix.hpp"
#include "params.hpp"
#include "point_cloud.hpp"
#include "sampling.hpp"
#include "tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace dctkit {

enum class UpsampleMode { cluster, nearest, idw3 };

inline const char* to_string(UpsampleMode m) {
    switch (m) {
    case UpsampleMode::cluster: return "cluster";
    case UpsampleMode::nearest: return "nearest";
    case UpsampleMode::idw3: return "idw3";
    }
    return "?";
}

inline UpsampleMode parse_upsample_mode(const std::string& s) {
    if (s == "cluster") return UpsampleMode::cluster;
    if (s == "nearest") return UpsampleMode::nearest;
    if (s == "idw3" || s == "trilinear") return UpsampleMode::idw3;
    throw ParameterError("unknown upsample mode '" + s + "' (expected cluster, nearest or idw3)");
}

/// Switches that swap or remove one mechanism each.
struct Ablation {
    bool use_fps = false;       // farthest point sampling on coordinates instead of density peaks
    bool use_knn_pool = false;  // coordinate kNN + MLP + max pool instead of cluster aggregation
    bool no_cross_attn = false;
    bool no_psa = false;
    bool no_csa = false;
    UpsampleMode upsample = UpsampleMode::cluster;

    bool operator==(const Ablation&) const = default;
};

struct NetConfig {
    std::size_t in_channels = 3;
    std::size_t stages = 3;
    std::vector<std::size_t> dims{32, 64, 128};
    double ratio = 0.25;
    std::size_t k_density = 16;
    std::size_t k_pool = 16;
    std::size_t num_classes = 2;
    std::size_t fps_start = 0;
    bool share_gfl_weights = false;
    Ablation ablation;
    unsigned threads = 1;

    void validate() const {
        if (stages == 0) {
            throw ConfigError("at least one encoder stage is required");
        }
        if (dims.size() != stages) {
            throw ConfigError("dims has " + std::to_string(dims.size()) + " entries for " + std::to_string(stages) +
                              " stages");
        }
        for (auto d : dims) {
            if (d == 0) {
                throw ConfigError("channel widths must be positive");
            }
        }
        if (!(ratio > 0.0 && ratio <= 1.0)) {
            throw ConfigError("sampling ratio must lie in (0, 1]");
        }
        if (in_channels < 3) {
            throw ConfigError("inputs need at least the 3 coordinate channels");
        }
        if (num_classes == 0) {
            throw ConfigError("num_classes must be positive");
        }
        if (k_density == 0 || k_pool == 0) {
            throw ConfigError("neighborhood sizes must be positive");
        }
    }

    /// ceil(ratio * n), never below 1.
    std::size_t sample_count(std::size_t n) const {
        const double raw = std::ceil(ratio * static_cast<double>(n) - 1e-9);
        return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, std::max<std::size_t>(n, 1));
    }

    /// Feature width entering encoder stage t (and leaving decoder stage t).
    std::size_t stage_input_width(std::size_t t) const { return t == 0 ? dims[0] : dims[t - 1]; }
};

template <typename T>
struct StageRecord {
    DenseMatrix<T> input_coords;   // N_t x 3
    DenseMatrix<T> sampled_coords; // S_t x 3
    DenseMatrix<T> pre_features;   // N_t x width entering the stage
    DenseMatrix<T> post_features;  // S_t x dims[t]
    ClusterMap map;
};

template <typename T>
struct StageTrace {
    std::vector<StageRecord<T>> stages;
};

template <typename T>
struct SegOutput {
    DenseMatrix<T> logits;
    std::vector<int> predicted;
};

/// Row-wise argmax, ties to the smaller class index.
template <typename T>
std::vector<int> argmax_rows(const DenseMatrix<T>& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (logits(i, j) > logits(i, best)) {
                best = j;
            }
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

/// Copies each cluster representative's row to every member of the cluster.
template <typename T>
DenseMatrix<T> cluster_upsample(const DenseMatrix<T>& coarse, const ClusterMap& map) {
    DenseMatrix<T> out(map.points(), coarse.cols());
    for (std::size_t j = 0; j < map.points(); ++j) {
        if (map.assignment[j] >= coarse.rows()) {
            throw IntegrityError("cluster_upsample: point " + std::to_string(j) + " refers to cluster " +
                                 std::to_string(map.assignment[j]) + " of " + std::to_string(coarse.rows()));
        }
        std::copy_n(coarse.row(map.assignment[j]).data(), coarse.cols(), out.row(j).data());
    }
    return out;
}

/// Interpolation stencil from coarse to fine points: `width` (index, weight) pairs per fine point.
template <typename T>
struct InterpStencil {
    std::size_t width = 0;
    std::vector<std::size_t> indices;
    std::vector<T> weights;
};

/**
 * nearest: copy of the closest coarse point.
 * idw3: the 3 closest coarse points weighted by inverse squared distance, normalized;
 * all coarse points when fewer than 3 exist. A fine point that coincides with a coarse
 * point copies it exactly.
 */
template <typename T>
InterpStencil<T> interp_stencil(const DenseMatrix<T>& coarse_coords, const DenseMatrix<T>& fine_coords,
                                UpsampleMode mode) {
    if (mode == UpsampleMode::cluster) {
        throw ParameterError("interp_upsample: mode must be nearest or idw3");
    }
    if (coarse_coords.rows() == 0) {
        throw ParameterError("interp_upsample: no coarse points");
    }
    const std::size_t s = coarse_coords.rows();
    const std::size_t width = mode == UpsampleMode::nearest ? 1 : std::min<std::size_t>(3, s);
    InterpStencil<T> st{width, {}, {}};
    st.indices.reserve(fine_coords.rows() * width);
    st.weights.reserve(fine_coords.rows() * width);
    std::vector<std::size_t> order(s);
    std::vector<T> dist(s);
    for (std::size_t i = 0; i < fine_coords.rows(); ++i) {
        for (std::size_t c = 0; c < s; ++c) {
            dist[c] = squared_distance(fine_coords.row(i), coarse_coords.row(c));
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(width), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                          });
        if (dist[order[0]] == T(0) || width == 1) {
            for (std::size_t m = 0; m < width; ++m) {
                st.indices.push_back(order[m]);
                st.weights.push_back(m == 0 ? T(1) : T(0));
            }
            continue;
        }
        T total = 0;
        for (std::size_t m = 0; m < width; ++m) {
            total += T(1) / dist[order[m]];
        }
        for (std::size_t m = 0; m < width; ++m) {
            st.indices.push_back(order[m]);
            st.weights.push_back((T(1) / dist[order[m]]) / total);
        }
    }
    return st;
}

namespace ag {

template <typename T>
Var interp_upsample(Tape<T>& t, Var coarse, const DenseMatrix<T>& coarse_coords, const DenseMatrix<T>& fine_coords,
                    UpsampleMode mode) {
    if (t.value(coarse).rows() != coarse_coords.rows()) {
        throw IntegrityError("interp_upsample: " + std::to_string(t.value(coarse).rows()) + " coarse features for " +
                             std::to_string(coarse_coords.rows()) + " coarse points");
    }
    auto st = interp_stencil(coarse_coords, fine_coords, mode);
    return weighted_gather(t, coarse, fine_coords.rows(), st.width, std::move(st.indices), std::move(st.weights));
}

template <typename T>
Var cluster_upsample(Tape<T>& t, Var coarse, const ClusterMap& map) {
    for (std::size_t j = 0; j < map.points(); ++j) {
        if (map.assignment[j] >= t.value(coarse).rows()) {
            throw IntegrityError("cluster_upsample: point " + std::to_string(j) + " refers to cluster " +
                                 std::to_string(map.assignment[j]) + " of " + std::to_string(t.value(coarse).rows()));
        }
    }
    return gather_rows(t, coarse, map.assignment);
}

} // namespace ag

template <typename T>
DenseMatrix<T> interp_upsample(const DenseMatrix<T>& coarse, const DenseMatrix<T>& coarse_coords,
                               const DenseMatrix<T>& fine_coords, UpsampleMode mode) {
    Tape<T> t;
    return t.value(ag::interp_upsample(t, t.constant(coarse), coarse_coords, fine_coords, mode));
}

template <typename T>
struct EncoderParams {
    ScoreHeadParams<T> score;
    AttentionWeights<T> cross;
    KnnPoolParams<T> pool;
    LbrParams<T> lift;
    GflParams<T> gfl;
};

template <typename T>
struct DecoderParams {
    LinearParams<T> skip;
    GflParams<T> gfl;
    LbrParams<T> reduce;
};

/**
 * @brief Hierarchical encoder-decoder segmentation network.
 *
 * stem LBR -> encoder stages (sample, cluster, aggregate, cross-attend, lift, GFL)
 * -> decoder stages in reverse (upsample, projected skip, GFL, width reduction)
 * -> head (LBR, linear). Parameters are registered at construction, in a fixed
 * order, whether or not the current ablation uses them.
 */
template <typename T>
class Network {
public:
    struct EncoderOut {
        Var features;
        DenseMatrix<T> coords;
        StageRecord<T> record;
    };

    struct ForwardOut {
        Var logits;
        StageTrace<T> trace;
    };

    Network(NetConfig config, std::uint64_t seed) : config_(std::move(config)), store_(seed) {
        config_.validate();
        stem_ = register_lbr(store_, "stem", config_.in_channels, config_.dims[0]);
        for (std::size_t t = 0; t < config_.stages; ++t) {
            const std::string p = "enc" + std::to_string(t);
            const std::size_t in = config_.stage_input_width(t);
            EncoderParams<T> e;
            e.score = register_score_head(store_, p + ".score", in);
            e.cross = register_attention(store_, p + ".cross", in);
            e.pool = register_knn_pool(store_, p + ".pool", in);
            e.lift = register_lbr(store_, p + ".lift", in, config_.dims[t]);
            e.gfl = register_gfl(store_, p + ".gfl", config_.dims[t]);
            encoders_.push_back(e);
        }
        for (std::size_t t = 0; t < config_.stages; ++t) {
            const std::string p = "dec" + std::to_string(t);
            DecoderParams<T> d;
            d.skip = register_linear(store_, p + ".skip", config_.stage_input_width(t), config_.dims[t]);
            d.gfl = config_.share_gfl_weights ? encoders_[t].gfl : register_gfl(store_, p + ".gfl", config_.dims[t]);
            d.reduce = register_lbr(store_, p + ".reduce", config_.dims[t], config_.stage_input_width(t));
            decoders_.push_back(d);
        }
        head_hidden_ = register_lbr(store_, "head.hidden", config_.dims[0], config_.dims[0]);
        head_out_ = register_linear(store_, "head.out", config_.dims[0], config_.num_classes);
    }

    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;

    const NetConfig& config() const noexcept { return config_; }
    ParamStore<T>& params() noexcept { return store_; }
    const ParamStore<T>& params() const noexcept { return store_; }
    const EncoderParams<T>& encoder_params(std::size_t t) const { return encoders_.at(t); }
    EncoderParams<T>& encoder_params(std::size_t t) { return encoders_.at(t); }
    DecoderParams<T>& decoder_params(std::size_t t) { return decoders_.at(t); }
    LbrParams<T>& stem_params() { return stem_; }

    Var stem(Tape<T>& t, Var input, Mode mode) const {
        if (t.value(input).cols() != config_.in_channels) {
            throw ConfigError("stem: cloud has " + std::to_string(t.value(input).cols()) +
                              " channels, network expects " + std::to_string(config_.in_channels));
        }
        return ag::lbr(t, input, stem_, mode);
    }

    EncoderOut encoder_stage(Tape<T>& t, Var features, const DenseMatrix<T>& coords, std::size_t stage,
                             Mode mode) const {
        if (stage >= config_.stages) {
            throw ConfigError("encoder stage " + std::to_string(stage) + " does not exist");
        }
        const auto& p = encoders_[stage];
        const auto& ab = config_.ablation;
        const auto& fv = t.value(features);
        const std::size_t n = fv.rows();
        if (coords.rows() != n) {
            throw ShapeError("encoder_stage: " + std::to_string(coords.rows()) + " coordinates for " +
                             std::to_string(n) + " points");
        }
        const std::size_t s = config_.sample_count(n);
        if (s < 1) {
            throw ConfigError("encoder_stage: stage would keep no points");
        }

        SampleSet samples;
        const std::size_t k = std::min(config_.k_density, n - 1);
        if (ab.use_fps) {
            samples = fps_sample(coords, s, std::min(config_.fps_start, n - 1));
        } else if (k == 0) {
            samples.indices = {0};
        } else {
            samples = sds_sample(fv, s, k, config_.threads).first;
        }
        ClusterMap map = sdc_assign(fv, samples, stage);
        for (std::size_t i : samples.indices) {
            t.note_branch(i);
        }
        for (std::size_t c : map.assignment) {
            t.note_branch(c);
        }

        Var scores = ag::score_head(t, features, p.score);
        Var agg;
        if (ab.use_knn_pool) {
            if (n > 1) {
                agg = ag::knn_pool(t, features, coords, samples, p.pool, std::min(config_.k_pool, n - 1));
            } else {
                agg = ag::relu(t, ag::linear(t, features, p.pool.mlp));
            }
        } else {
            agg = ag::weighted_aggregate(t, features, map, scores);
        }
        if (!ab.no_cross_attn) {
            agg = ag::cross_attention(t, agg, features, scores, p.cross);
        }
        Var lifted = ag::lbr(t, agg, p.lift, mode);
        auto sampled_coords = gather_rows(coords, std::span<const std::size_t>(samples.indices));
        Var out = ag::gfl_block(t, lifted, sampled_coords, p.gfl, mode, gfl_options());

        StageRecord<T> rec{coords, sampled_coords, fv, t.value(out), std::move(map)};
        return {out, std::move(sampled_coords), std::move(rec)};
    }

    /// Upsample to the record's resolution, add the projected encoder features, then GFL.
    Var decoder_stage(Tape<T>& t, Var coarse, Var skip, const StageRecord<T>& rec, std::size_t stage,
                      Mode mode) const {
        if (stage >= config_.stages) {
            throw IntegrityError("decoder stage " + std::to_string(stage) + " has no encoder record");
        }
        const auto& p = decoders_[stage];
        const auto& cv = t.value(coarse);
        if (cv.rows() != rec.map.clusters() || t.value(skip).rows() != rec.map.points() ||
            rec.input_coords.rows() != rec.map.points()) {
            throw IntegrityError("decoder_stage " + std::to_string(stage) + ": record describes " +
                                 std::to_string(rec.map.clusters()) + " -> " + std::to_string(rec.map.points()) +
                                 " points, got " + std::to_string(cv.rows()) + " coarse and " +
                                 std::to_string(t.value(skip).rows()) + " skip rows");
        }
        Var up = config_.ablation.upsample == UpsampleMode::cluster
                     ? ag::cluster_upsample(t, coarse, rec.map)
                     : ag::interp_upsample(t, coarse, rec.sampled_coords, rec.input_coords, config_.ablation.upsample);
        Var h = ag::add(t, up, ag::linear(t, skip, p.skip));
        return ag::gfl_block(t, h, rec.input_coords, p.gfl, mode, gfl_options());
    }

    ForwardOut forward(Tape<T>& t, const PointCloud<T>& cloud, Mode mode) const {
        cloud.validate();
        Var x = stem(t, t.constant(cloud.input_features()), mode);
        DenseMatrix<T> coords = cloud.coords;
        std::vector<Var> skips;
        ForwardOut out;
        for (std::size_t s = 0; s < config_.stages; ++s) {
            skips.push_back(x);
            auto enc = encoder_stage(t, x, coords, s, mode);
            x = enc.features;
            coords = std::move(enc.coords);
            out.trace.stages.push_back(std::move(enc.record));
        }
        for (std::size_t s = config_.stages; s-- > 0;) {
            x = decoder_stage(t, x, skips[s], out.trace.stages[s], s, mode);
            x = ag::lbr(t, x, decoders_[s].reduce, mode);
        }
        x = ag::lbr(t, x, head_hidden_, mode);
        out.logits = ag::linear(t, x, head_out_);
        return out;
    }

    Var loss(Tape<T>& t, const PointCloud<T>& cloud, Mode mode) const {
        if (!cloud.labels) {
            throw DataError("loss requires a labelled cloud");
        }
        return ag::cross_entropy(t, forward(t, cloud, mode).logits, *cloud.labels);
    }

    SegOutput<T> predict(const PointCloud<T>& cloud, Mode mode = Mode::eval) {
        Tape<T> t;
        auto f = forward(t, cloud, mode);
        SegOutput<T> out{t.value(f.logits), {}};
        out.predicted = argmax_rows(out.logits);
        return out;
    }

    std::pair<SegOutput<T>, StageTrace<T>> predict_with_trace(const PointCloud<T>& cloud, Mode mode = Mode::eval) {
        Tape<T> t;
        auto f = forward(t, cloud, mode);
        SegOutput<T> out{t.value(f.logits), {}};
        out.predicted = argmax_rows(out.logits);
        return {std::move(out), std::move(f.trace)};
    }

private:
    GflOptions gfl_options() const { return {!config_.ablation.no_psa, !config_.ablation.no_csa}; }

    NetConfig config_;
    ParamStore<T> store_;
    LbrParams<T> stem_;
    std::vector<EncoderParams<T>> encoders_;
    std::vector<DecoderParams<T>> decoders_;
    LbrParams<T> head_hidden_;
    LinearParams<T> head_out_;
};

/// Mean softmax cross-entropy of logits against labels.
template <typename T>
T loss_ce(const DenseMatrix<T>& logits, const std::vector<int>& labels) {
    Tape<T> t;
    return t.value(ag::cross_entropy(t, t.constant(logits), labels))[0];
}

} // namespace dctkit
