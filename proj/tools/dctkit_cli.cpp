#include <CLI11.hpp>

#include <dctkit/dctkit.hpp>

#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

using namespace dctkit;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_usage = 2;

/// Options shared by every subcommand. Unset network options keep the subcommand's default.
struct Common {
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::optional<std::size_t> stages;
    std::vector<std::size_t> dims;
    std::optional<double> ratio;
    std::optional<std::size_t> k_density;
    std::optional<std::size_t> k_pool;
    std::optional<std::size_t> classes;
    std::optional<std::string> upsample;
    bool share_gfl = false;
    bool fps = false;
    bool knn_pool = false;
    bool no_cross_attn = false;
    bool no_psa = false;
    bool no_csa = false;

    NetConfig apply(NetConfig c) const {
        if (stages) c.stages = *stages;
        if (!dims.empty()) c.dims = dims;
        if (stages && dims.empty()) c.dims.assign(*stages, c.dims.empty() ? 32 : c.dims.front());
        if (ratio) c.ratio = *ratio;
        if (k_density) c.k_density = *k_density;
        if (k_pool) c.k_pool = *k_pool;
        if (classes) c.num_classes = *classes;
        if (upsample) c.ablation.upsample = parse_upsample_mode(*upsample);
        c.share_gfl_weights = c.share_gfl_weights || share_gfl;
        c.ablation.use_fps = c.ablation.use_fps || fps;
        c.ablation.use_knn_pool = c.ablation.use_knn_pool || knn_pool;
        c.ablation.no_cross_attn = c.ablation.no_cross_attn || no_cross_attn;
        c.ablation.no_psa = c.ablation.no_psa || no_psa;
        c.ablation.no_csa = c.ablation.no_csa || no_csa;
        c.threads = threads;
        return c;
    }
};

/// Where a point cloud comes from: an xyz file or a synthetic generator.
struct Input {
    std::string path;
    std::string labels;
    std::string synthetic;
    std::size_t points = 256;
    bool normalize = false;

    void add_to(CLI::App* cmd) {
        auto* in = cmd->add_option("--in", path, "xyz point file");
        cmd->add_option("--labels", labels, "label file, one integer per line")->needs(in);
        cmd->add_option("--synthetic", synthetic, "generate a labelled toy cloud instead of reading a file")
            ->check(CLI::IsMember(synthetic_shapes()))
            ->excludes(in);
        cmd->add_option("--points", points, "point count for --synthetic")->check(CLI::PositiveNumber);
        cmd->add_flag("--normalize", normalize, "centre and scale coordinates to the unit sphere");
    }

    template <typename T>
    PointCloud<T> load(std::uint64_t seed) const {
        if (!path.empty()) {
            return load_xyz<T>(path, normalize, labels);
        }
        if (synthetic.empty()) {
            throw CLI::RequiredError("--in or --synthetic");
        }
        // same derivation as train-toy, so a seed reproduces its first training cloud
        auto cloud = make_dataset<T>(DatasetSpec{synthetic, points, 1}, child_seed(seed, "data")).front();
        if (normalize) {
            normalize_unit_sphere(cloud);
        }
        return cloud;
    }
};

/// Opens `path` for writing, or returns stdout for "" and "-".
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) {
                throw DataError("cannot write '" + path + "'");
            }
        }
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }

private:
    std::unique_ptr<std::ofstream> file_;
};

/// The toy network (matching what train-toy saves), sized for the given cloud.
template <typename T>
Network<T> build_network(const Common& common, const Input& input, const PointCloud<T>& cloud,
                         const std::string& checkpoint) {
    NetConfig c = common.apply(toy_config());
    if (!common.classes && !input.synthetic.empty()) {
        c.num_classes = synthetic_classes(input.synthetic);
    }
    c.in_channels = cloud.channels();
    Network<T> net(c, child_seed(common.seed, "params"));
    if (!checkpoint.empty()) {
        load_checkpoint(net.params(), checkpoint);
    }
    return net;
}

int run_sample(const Common& common, const Input& input, std::size_t s, const std::string& method, std::size_t start,
               const std::string& out, const std::string& indices_out) {
    const auto cloud = input.load<double>(common.seed);
    cloud.validate();
    const std::size_t k = common.k_density.value_or(16);
    std::vector<std::string> header;
    SampleSet samples;
    std::vector<std::vector<double>> columns;
    if (method == "sds") {
        auto [set, prof] = sds_sample(cloud.input_features(), s, std::min(k, cloud.size() - 1), common.threads);
        samples = std::move(set);
        header = {"density", "delta", "score"};
        columns = {prof.density, prof.delta, prof.score};
    } else {
        samples = fps_sample(cloud.coords, s, start);
        std::vector<double> nearest(cloud.size(), std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            for (auto j : samples.indices) {
                double sq = 0;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double d = cloud.coords(i, c) - cloud.coords(j, c);
                    sq += d * d;
                }
                nearest[i] = std::min(nearest[i], sq);
            }
        }
        header = {"min_sq_dist"};
        columns = {nearest};
    }

    if (!out.empty()) {
        std::vector<char> selected(cloud.size(), 0);
        for (auto i : samples.indices) {
            selected[i] = 1;
        }
        Sink sink(out);
        auto& os = sink.stream();
        os.precision(17);
        os << "point";
        for (const auto& h : header) {
            os << ',' << h;
        }
        os << ",selected\n";
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            os << i;
            for (const auto& col : columns) {
                os << ',' << col[i];
            }
            os << ',' << int(selected[i]) << '\n';
        }
    }
    if (!indices_out.empty() || out.empty()) {
        Sink sink(indices_out);
        sink.stream() << "index\n";
        for (auto i : samples.indices) {
            sink.stream() << i << '\n';
        }
    }
    return exit_ok;
}

int run_cluster(const Common& common, const Input& input, const std::string& checkpoint, const std::string& out) {
    const auto cloud = input.load<float>(common.seed);
    auto net = build_network(common, input, cloud, checkpoint);
    const auto [seg, trace] = net.predict_with_trace(cloud);
    Sink sink(out);
    write_trace(trace, sink.stream());
    return exit_ok;
}

int run_forward(const Common& common, const Input& input, const std::string& checkpoint, const std::string& out) {
    const auto cloud = input.load<float>(common.seed);
    auto net = build_network(common, input, cloud, checkpoint);
    const auto seg = net.predict(cloud);
    Sink sink(out);
    write_labels(seg.predicted, sink.stream());
    if (cloud.labels) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < seg.predicted.size(); ++i) {
            correct += seg.predicted[i] == (*cloud.labels)[i];
        }
        std::cerr << "accuracy " << static_cast<double>(correct) / static_cast<double>(cloud.size()) << '\n';
    }
    return exit_ok;
}

int run_gradcheck(const Common& common, std::size_t points, double h, double tol, bool all, const std::string& out) {
    const auto base = common.apply(tiny_config());
    std::vector<Ablation> configs = all ? all_ablations() : std::vector<Ablation>{base.ablation};
    Sink sink(out);
    bool ok = true;
    for (const auto& a : configs) {
        NetConfig cfg = base;
        cfg.ablation = a;
        const auto report = gradcheck_network(cfg, common.seed, points, h, tol);
        if (all) {
            sink.stream() << "# " << describe(a) << '\n';
        }
        print_report(sink.stream(), report);
        std::cerr << describe(a) << ": max rel error " << report.max_rel_error << " ("
                  << (report.passed ? "PASS" : "FAIL") << ")\n";
        ok = ok && report.passed;
    }
    return ok ? exit_ok : exit_failure;
}

int run_train(const Common& common, const DatasetSpec& spec, const TrainOptions& opt, const std::string& metrics,
              const std::string& checkpoint) {
    auto cfg = common.apply(toy_config());
    cfg.num_classes = synthetic_classes(spec.shape);
    cfg.in_channels = 3;
    const auto data = make_dataset<float>(spec, child_seed(common.seed, "data"));
    Network<float> net(cfg, child_seed(common.seed, "params"));
    Sink sink(metrics);
    try {
        const auto history = train(net, data, opt);
        write_metrics_csv(history, sink.stream());
    } catch (const TrainingDiverged& e) {
        write_metrics_csv(e.history(), sink.stream());
        throw;
    }
    if (!checkpoint.empty()) {
        save_checkpoint(net.params(), checkpoint);
    }
    return exit_ok;
}

int run_bench(const Common& common, std::size_t n, std::size_t s, std::size_t d, std::size_t k, std::size_t reps,
              bool blocks, const std::string& out) {
    const auto r = bench_sampling<float>(n, s, d, k, reps, common.seed, common.threads);
    std::vector<BenchReport> rows{r.fps, r.sds};
    if (blocks) {
        const auto more = bench_blocks<float>(n, s, d, k, reps, common.seed, common.threads);
        rows.insert(rows.end(), more.begin(), more.end());
    }
    Sink sink(out);
    write_bench_csv(rows, sink.stream());
    std::cerr << "sds/fps median ratio " << r.sds.ratio_vs_baseline << " (reference claim: sds about 4x faster)\n"
              << "sampled indices " << (r.deterministic ? "deterministic" : "NOT deterministic") << " across "
              << r.sds.repetitions << " repetitions\n";
    return r.deterministic ? exit_ok : exit_failure;
}

int run_ablate(const Common& common, std::size_t points, bool with_gradcheck, const std::string& out) {
    Sink sink(out);
    auto& os = sink.stream();
    os << "variant,flags,parameters,loss,logits_rows,logits_cols,grad_finite";
    if (with_gradcheck) {
        os << ",gradcheck_max_rel_error,gradcheck";
    }
    os << ",status\n";
    bool ok = true;
    for (const auto& v : table_variants()) {
        NetConfig cfg = common.apply(tiny_config(v.ablation));
        cfg.ablation = v.ablation;
        cfg.in_channels = 3;
        const auto cloud = gen_synthetic<float>("airplane-toy", points, child_seed(common.seed, "data"));
        Network<float> net(cfg, child_seed(common.seed, "params"));
        Tape<float> t;
        const auto f = net.forward(t, cloud, Mode::train);
        const auto loss = ag::cross_entropy(t, f.logits, *cloud.labels);
        t.backward(loss);
        bool finite = true;
        for (const auto& p : net.params()) {
            finite = finite && all_finite(p.grad);
        }
        const auto& logits = t.value(f.logits);
        bool row_ok = finite && logits.rows() == points && logits.cols() == cfg.num_classes;
        os << v.name << ',' << describe(v.ablation) << ',' << net.params().trainable_count() << ','
           << t.value(loss)[0] << ',' << logits.rows() << ',' << logits.cols() << ',' << (finite ? 1 : 0);
        if (with_gradcheck) {
            const auto report = gradcheck_network(cfg, common.seed, points);
            os << ',' << report.max_rel_error << ',' << (report.passed ? "PASS" : "FAIL");
            row_ok = row_ok && report.passed;
        }
        os << ',' << (row_ok ? "ok" : "failed") << '\n';
        ok = ok && row_ok;
    }
    return ok ? exit_ok : exit_failure;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dctkit: dynamic clustering transformer toolkit for point clouds"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "key=value configuration file; command-line flags take precedence");

    Common common;
    app.add_option("--seed", common.seed, "root seed for every generator");
    app.add_option("--threads", common.threads, "threads for pairwise-distance kernels")->check(CLI::PositiveNumber);
    auto* net_group = app.add_option_group("network", "network shape and ablation switches");
    net_group->add_option("--stages", common.stages, "encoder stages")->check(CLI::PositiveNumber);
    net_group->add_option("--dims", common.dims, "channel width per stage")->delimiter(',');
    net_group->add_option("--ratio", common.ratio, "sampling ratio per stage")->check(CLI::Range(0.0, 1.0));
    net_group->add_option("--k-density", common.k_density, "neighbours for density estimation");
    net_group->add_option("--k-pool", common.k_pool, "neighbours for the kNN pooling baseline");
    net_group->add_option("--classes", common.classes, "output classes");
    net_group->add_option("--upsample", common.upsample, "decoder upsampling")
        ->check(CLI::IsMember({"cluster", "nearest", "idw3", "trilinear"}));
    net_group->add_flag("--share-gfl", common.share_gfl, "decoder reuses encoder attention weights");
    net_group->add_flag("--fps", common.fps, "farthest point sampling instead of density peaks");
    net_group->add_flag("--knn-pool", common.knn_pool, "kNN + MLP + max pooling instead of cluster aggregation");
    net_group->add_flag("--no-cross-attn", common.no_cross_attn, "drop the cross-attention enhancement");
    net_group->add_flag("--no-psa", common.no_psa, "drop point-wise self-attention");
    net_group->add_flag("--no-csa", common.no_csa, "drop channel-wise self-attention");

    std::function<int()> action;

    auto* sample = app.add_subcommand("sample", "select sample points from a cloud");
    Input sample_in;
    sample_in.add_to(sample);
    std::size_t sample_s = 0;
    std::string sample_method = "sds";
    std::size_t sample_start = 0;
    std::string sample_out;
    std::string sample_indices;
    sample->add_option("--s", sample_s, "number of samples")->required()->check(CLI::PositiveNumber);
    sample->add_option("--method", sample_method, "sds or fps")->check(CLI::IsMember({"sds", "fps"}));
    sample->add_option("--start", sample_start, "first index for fps");
    sample->add_option("--out", sample_out, "per-point score CSV");
    sample->add_option("--indices", sample_indices, "selected index CSV (stdout when no --out is given)");
    sample->callback([&] {
        action = [&] {
            return run_sample(common, sample_in, sample_s, sample_method, sample_start, sample_out, sample_indices);
        };
    });

    auto* cluster = app.add_subcommand("cluster", "write the per-stage sample indices and cluster assignments");
    Input cluster_in;
    cluster_in.add_to(cluster);
    std::string cluster_ckpt;
    std::string cluster_out;
    cluster->add_option("--checkpoint", cluster_ckpt, "parameters to load");
    cluster->add_option("--out", cluster_out, "trace file (default stdout)");
    cluster->callback([&] { action = [&] { return run_cluster(common, cluster_in, cluster_ckpt, cluster_out); }; });

    auto* forward = app.add_subcommand("forward", "predict one label per point");
    Input forward_in;
    forward_in.add_to(forward);
    std::string forward_ckpt;
    std::string forward_out;
    forward->add_option("--checkpoint", forward_ckpt, "parameters to load");
    forward->add_option("--out", forward_out, "label file (default stdout)");
    forward->callback([&] { action = [&] { return run_forward(common, forward_in, forward_ckpt, forward_out); }; });

    auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    std::size_t grad_points = 32;
    double grad_h = 1e-5;
    double grad_tol = 1e-4;
    bool grad_all = false;
    std::string grad_out;
    grad->add_option("--points", grad_points, "points in the synthetic cloud")->check(CLI::PositiveNumber);
    grad->add_option("--step", grad_h, "finite-difference step")->check(CLI::PositiveNumber);
    grad->add_option("--tol", grad_tol, "relative error tolerance")->check(CLI::PositiveNumber);
    grad->add_flag("--all-ablations", grad_all, "check every switch combination and upsampling mode");
    grad->add_option("--out", grad_out, "report CSV (default stdout)");
    grad->callback([&] {
        action = [&] { return run_gradcheck(common, grad_points, grad_h, grad_tol, grad_all, grad_out); };
    });

    auto* trainer = app.add_subcommand("train-toy", "train on a synthetic labelled dataset");
    DatasetSpec train_spec;
    TrainOptions train_opt;
    std::string train_metrics;
    std::string train_ckpt = "toy.ckpt";
    trainer->add_option("--shape", train_spec.shape, "synthetic dataset")->check(CLI::IsMember(synthetic_shapes()));
    trainer->add_option("--points", train_spec.points, "points per cloud")->check(CLI::PositiveNumber);
    trainer->add_option("--clouds", train_spec.clouds, "clouds per epoch")->check(CLI::PositiveNumber);
    trainer->add_option("--epochs", train_opt.epochs, "training epochs")->check(CLI::PositiveNumber);
    trainer->add_option("--lr", train_opt.adam.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
    trainer->add_option("--weight-decay", train_opt.adam.weight_decay, "L2 coefficient")
        ->check(CLI::NonNegativeNumber);
    trainer->add_flag("--cosine", train_opt.cosine, "cosine learning-rate schedule");
    trainer->add_option("--metrics", train_metrics, "per-epoch metrics CSV (default stdout)");
    trainer->add_option("--checkpoint", train_ckpt, "where to save the trained parameters (empty to skip)");
    trainer->callback([&] {
        action = [&] { return run_train(common, train_spec, train_opt, train_metrics, train_ckpt); };
    });

    auto* bench = app.add_subcommand("bench", "time sds against fps (and optionally grouping and upsampling)");
    std::size_t bn = 2048;
    std::size_t bs = 512;
    std::size_t bd = 64;
    std::size_t bk = 16;
    std::size_t breps = 11;
    bool bblocks = false;
    std::string bout;
    bench->add_option("--n", bn, "points")->check(CLI::PositiveNumber);
    bench->add_option("--s", bs, "samples")->check(CLI::PositiveNumber);
    bench->add_option("--d", bd, "feature width")->check(CLI::PositiveNumber);
    bench->add_option("--k", bk, "density neighbours")->check(CLI::PositiveNumber);
    bench->add_option("--reps", breps, "timed repetitions (at least 5)");
    bench->add_flag("--blocks", bblocks, "also time grouping and upsampling variants");
    bench->add_option("--out", bout, "report CSV (default stdout)");
    bench->callback([&] { action = [&] { return run_bench(common, bn, bs, bd, bk, breps, bblocks, bout); }; });

    auto* ablate = app.add_subcommand("ablate", "run one forward and backward step per ablation variant");
    std::size_t ab_points = 32;
    bool ab_grad = false;
    std::string ab_out;
    ablate->add_option("--points", ab_points, "points in the synthetic cloud")->check(CLI::PositiveNumber);
    ablate->add_flag("--gradcheck", ab_grad, "also gradient-check each variant");
    ablate->add_option("--out", ab_out, "summary CSV (default stdout)");
    ablate->callback([&] { action = [&] { return run_ablate(common, ab_points, ab_grad, ab_out); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        return action();
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
}
