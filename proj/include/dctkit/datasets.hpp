#pragma once

#include "errors.hpp"
#include "params.hpp"
#include "point_cloud.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace dctkit {

inline const std::vector<std::string>& synthetic_shapes() {
    static const std::vector<std::string> shapes{"plane+sphere", "two-gaussians", "airplane-toy"};
    return shapes;
}

inline std::size_t synthetic_classes(const std::string& shape) {
    if (shape == "plane+sphere" || shape == "two-gaussians") return 2;
    if (shape == "airplane-toy") return 3;
    throw ParameterError("unknown synthetic shape '" + shape + "'");
}

/**
 * Labelled toy clouds, deterministic per (shape, n, seed).
 *
 *  plane+sphere   z = 0 square [-1,1]^2 (label 0, first n/2 points) and a sphere of
 *                 radius 0.3 centred at (0, 0, 0.6) (label 1).
 *  two-gaussians  isotropic blobs (sd 0.2) at x = -1 (label 0) and x = +1 (label 1).
 *  airplane-toy   fuselage cylinder along x (label 0), wing slabs (label 1) and a tail fin
 *                 (label 2); parts are at least 0.05 apart.
 */
template <typename T>
PointCloud<T> gen_synthetic(const std::string& shape, std::size_t n, std::uint64_t seed) {
    const std::size_t classes = synthetic_classes(shape);
    if (n < classes) {
        throw ParameterError("gen_synthetic: " + shape + " needs at least " + std::to_string(classes) + " points");
    }
    auto rng = named_rng(seed, "synthetic/" + shape);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    PointCloud<T> cloud;
    cloud.coords = DenseMatrix<T>(n, 3);
    std::vector<int> labels(n);
    auto put = [&](std::size_t i, double x, double y, double z, int label) {
        cloud.coords(i, 0) = static_cast<T>(x);
        cloud.coords(i, 1) = static_cast<T>(y);
        cloud.coords(i, 2) = static_cast<T>(z);
        labels[i] = label;
    };

    if (shape == "plane+sphere") {
        const std::size_t half = n / 2;
        for (std::size_t i = 0; i < half; ++i) {
            const double x = uniform(-1, 1);
            const double y = uniform(-1, 1);
            put(i, x, y, 0.0, 0);
        }
        for (std::size_t i = half; i < n; ++i) {
            double v[3];
            double len = 0;
            do {
                len = 0;
                for (double& c : v) {
                    c = gauss(rng);
                    len += c * c;
                }
            } while (len < 1e-12);
            len = std::sqrt(len);
            put(i, 0.3 * v[0] / len, 0.3 * v[1] / len, 0.6 + 0.3 * v[2] / len, 1);
        }
    } else if (shape == "two-gaussians") {
        const std::size_t half = n / 2;
        for (std::size_t i = 0; i < n; ++i) {
            const double cx = i < half ? -1.0 : 1.0;
            const double x = cx + 0.2 * gauss(rng);
            const double y = 0.2 * gauss(rng);
            const double z = 0.2 * gauss(rng);
            put(i, x, y, z, i < half ? 0 : 1);
        }
    } else {
        const std::size_t fuselage = n / 2;
        const std::size_t wings = std::max<std::size_t>(1, (n * 7) / 20);
        for (std::size_t i = 0; i < n; ++i) {
            if (i < fuselage) {
                const double a = uniform(0, 2 * std::numbers::pi);
                const double x = uniform(-1, 1);
                put(i, x, 0.1 * std::cos(a), 0.1 * std::sin(a), 0);
            } else if (i < fuselage + wings) {
                const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
                const double x = uniform(-0.25, 0.25);
                const double y = side * uniform(0.15, 1.0);
                const double z = uniform(-0.02, 0.02);
                put(i, x, y, z, 1);
            } else {
                const double x = uniform(0.8, 1.0);
                const double y = uniform(-0.02, 0.02);
                const double z = uniform(0.15, 0.5);
                put(i, x, y, z, 2);
            }
        }
    }
    cloud.labels = std::move(labels);
    return cloud;
}

} // namespace dctkit
