#pragma once

#include "errors.hpp"
#include "matrix.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace dctkit {

/// Points with optional unit normals, optional extra channels and optional labels.
template <typename T>
struct PointCloud {
    DenseMatrix<T> coords; // N x 3
    std::optional<DenseMatrix<T>> normals;
    std::optional<DenseMatrix<T>> extras;
    std::optional<std::vector<int>> labels;

    std::size_t size() const noexcept { return coords.rows(); }

    std::size_t channels() const noexcept {
        return 3 + (normals ? 3 : 0) + (extras ? extras->cols() : 0);
    }

    /// coords | normals | extras, one row per point.
    DenseMatrix<T> input_features() const {
        DenseMatrix<T> out(size(), channels());
        for (std::size_t i = 0; i < size(); ++i) {
            std::size_t c = 0;
            for (std::size_t j = 0; j < 3; ++j) {
                out(i, c++) = coords(i, j);
            }
            if (normals) {
                for (std::size_t j = 0; j < 3; ++j) {
                    out(i, c++) = (*normals)(i, j);
                }
            }
            if (extras) {
                for (std::size_t j = 0; j < extras->cols(); ++j) {
                    out(i, c++) = (*extras)(i, j);
                }
            }
        }
        return out;
    }

    void validate() const {
        if (size() == 0) {
            throw DataError("point cloud is empty");
        }
        if (coords.cols() != 3) {
            throw ShapeError("point cloud coordinates must be N x 3, got " + coords.shape_string());
        }
        require_finite(coords, "point cloud coordinates");
        if (normals) {
            if (normals->rows() != size() || normals->cols() != 3) {
                throw ShapeError("normals must be N x 3, got " + normals->shape_string());
            }
            for (std::size_t i = 0; i < size(); ++i) {
                double sq = 0;
                for (T v : normals->row(i)) {
                    sq += static_cast<double>(v) * static_cast<double>(v);
                }
                const double len = std::sqrt(sq);
                if (std::abs(len - 1.0) > 1e-3) {
                    throw DataError("normal at point " + std::to_string(i) + " is not unit length");
                }
            }
        }
        if (extras && extras->rows() != size()) {
            throw ShapeError("extra channels have " + std::to_string(extras->rows()) + " rows for " +
                             std::to_string(size()) + " points");
        }
        if (labels) {
            if (labels->size() != size()) {
                throw DataError(std::to_string(labels->size()) + " labels for " + std::to_string(size()) + " points");
            }
            for (int l : *labels) {
                if (l < 0) {
                    throw DataError("negative label " + std::to_string(l));
                }
            }
        }
    }

    /// Reorders every per-point field: row i of the result is row perm[i] of this cloud.
    PointCloud permuted(const std::vector<std::size_t>& perm) const {
        PointCloud out;
        out.coords = gather_rows(coords, std::span<const std::size_t>(perm));
        if (normals) {
            out.normals = gather_rows(*normals, std::span<const std::size_t>(perm));
        }
        if (extras) {
            out.extras = gather_rows(*extras, std::span<const std::size_t>(perm));
        }
        if (labels) {
            std::vector<int> l(perm.size());
            for (std::size_t i = 0; i < perm.size(); ++i) {
                l[i] = (*labels)[perm[i]];
            }
            out.labels = std::move(l);
        }
        return out;
    }
};

} // namespace dctkit
