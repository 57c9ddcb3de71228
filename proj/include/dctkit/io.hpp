#pragma once

#include "clustering.hpp"
#include "errors.hpp"
#include "network.hpp"
#include "point_cloud.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace dctkit {

namespace detail {

inline double parse_double(const std::string& tok, std::size_t lineno) {
    double v = 0;
    const char* first = tok.data();
    if (!tok.empty() && tok[0] == '+') {
        ++first;
    }
    auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw ParseError("non-numeric token '" + tok + "'", lineno);
    }
    return v;
}

inline bool skippable(const std::string& line) {
    const auto pos = line.find_first_not_of(" \t\r");
    return pos == std::string::npos || line[pos] == '#';
}

} // namespace detail

/**
 * Whitespace-separated rows "x y z [nx ny nz [c1 ...]]". Blank lines and lines starting
 * with '#' are skipped. Columns 4-6 are read as normals only when every row has a unit
 * vector there; otherwise all columns past the third are extra channels.
 */
template <typename T>
PointCloud<T> parse_xyz(std::istream& is) {
    std::vector<double> vals;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::skippable(line)) {
            continue;
        }
        std::istringstream ss(line);
        std::string tok;
        std::size_t c = 0;
        while (ss >> tok) {
            vals.push_back(detail::parse_double(tok, lineno));
            ++c;
        }
        if (rows == 0) {
            if (c < 3) {
                throw ParseError("expected at least 3 columns, found " + std::to_string(c), lineno);
            }
            cols = c;
        } else if (c != cols) {
            throw ParseError("row has " + std::to_string(c) + " columns, expected " + std::to_string(cols), lineno);
        }
        ++rows;
    }
    if (rows == 0) {
        throw ParseError("no points in file", 0);
    }

    auto column_block = [&](std::size_t first, std::size_t width) {
        DenseMatrix<T> m(rows, width);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                m(r, c) = static_cast<T>(vals[r * cols + first + c]);
            }
        }
        return m;
    };

    PointCloud<T> cloud;
    cloud.coords = column_block(0, 3);
    std::size_t extra_from = 3;
    if (cols >= 6) {
        bool unit = true;
        for (std::size_t r = 0; r < rows && unit; ++r) {
            double sq = 0;
            for (std::size_t c = 3; c < 6; ++c) {
                sq += vals[r * cols + c] * vals[r * cols + c];
            }
            unit = std::abs(std::sqrt(sq) - 1.0) <= 1e-3;
        }
        if (unit) {
            cloud.normals = column_block(3, 3);
            extra_from = 6;
        }
    }
    if (cols > extra_from) {
        cloud.extras = column_block(extra_from, cols - extra_from);
    }
    return cloud;
}

/// One non-negative integer label per line.
inline std::vector<int> parse_labels(std::istream& is) {
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::skippable(line)) {
            continue;
        }
        std::istringstream ss(line);
        std::string tok;
        std::string extra;
        ss >> tok;
        int v = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size() || (ss >> extra)) {
            throw ParseError("expected one integer label, got '" + line + "'", lineno);
        }
        if (v < 0) {
            throw ParseError("negative label " + std::to_string(v), lineno);
        }
        labels.push_back(v);
    }
    return labels;
}

/// Centres on the centroid and scales the farthest point to radius 1.
template <typename T>
void normalize_unit_sphere(PointCloud<T>& cloud) {
    const std::size_t n = cloud.size();
    double centroid[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            centroid[c] += static_cast<double>(cloud.coords(i, c));
        }
    }
    for (double& c : centroid) {
        c /= static_cast<double>(n);
    }
    double radius = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = static_cast<double>(cloud.coords(i, c)) - centroid[c];
            sq += d * d;
        }
        radius = std::max(radius, std::sqrt(sq));
    }
    if (radius == 0) {
        radius = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            cloud.coords(i, c) = static_cast<T>((static_cast<double>(cloud.coords(i, c)) - centroid[c]) / radius);
        }
    }
}

template <typename T>
PointCloud<T> load_xyz(const std::string& path, bool normalize = false, const std::string& labels_path = {}) {
    std::ifstream is(path);
    if (!is) {
        throw ParseError("cannot open '" + path + "'", 0);
    }
    auto cloud = parse_xyz<T>(is);
    if (!labels_path.empty()) {
        std::ifstream ls(labels_path);
        if (!ls) {
            throw ParseError("cannot open '" + labels_path + "'", 0);
        }
        auto labels = parse_labels(ls);
        if (labels.size() != cloud.size()) {
            throw ParseError(std::to_string(labels.size()) + " labels for " + std::to_string(cloud.size()) +
                                 " points in '" + path + "'",
                             0);
        }
        cloud.labels = std::move(labels);
    }
    if (normalize) {
        normalize_unit_sphere(cloud);
    }
    return cloud;
}

template <typename T>
void write_xyz(const PointCloud<T>& cloud, std::ostream& os) {
    os.precision(std::numeric_limits<T>::max_digits10);
    const auto f = cloud.input_features();
    for (std::size_t i = 0; i < f.rows(); ++i) {
        for (std::size_t c = 0; c < f.cols(); ++c) {
            os << (c ? " " : "") << f(i, c);
        }
        os << '\n';
    }
}

inline void write_labels(const std::vector<int>& labels, std::ostream& os) {
    for (int l : labels) {
        os << l << '\n';
    }
}

inline constexpr const char* trace_magic = "DCTKIT-TRACE v1";

/**
 * Stage trace dump:
 *   DCTKIT-TRACE v1
 *   stages <count>
 *   stage <t>: points <N_t> samples <S_t>
 *   stage <t>: sample_indices <S_t indices>
 *   stage <t>: assignment <N_t cluster ids>
 */
inline void write_cluster_maps(const std::vector<ClusterMap>& maps, std::ostream& os) {
    os << trace_magic << '\n' << "stages " << maps.size() << '\n';
    for (const auto& m : maps) {
        os << "stage " << m.stage_id << ": points " << m.points() << " samples " << m.clusters() << '\n';
        os << "stage " << m.stage_id << ": sample_indices";
        for (auto v : m.sample_indices) {
            os << ' ' << v;
        }
        os << '\n' << "stage " << m.stage_id << ": assignment";
        for (auto v : m.assignment) {
            os << ' ' << v;
        }
        os << '\n';
    }
}

template <typename T>
void write_trace(const StageTrace<T>& trace, std::ostream& os) {
    std::vector<ClusterMap> maps;
    for (const auto& s : trace.stages) {
        maps.push_back(s.map);
    }
    write_cluster_maps(maps, os);
}

inline std::vector<ClusterMap> read_cluster_maps(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    auto next = [&](const char* what) {
        if (!std::getline(is, line)) {
            throw ParseError(std::string("unexpected end of trace, expected ") + what, lineno + 1);
        }
        ++lineno;
    };
    next("header");
    if (line != trace_magic) {
        throw ParseError("unsupported trace version '" + line + "'", lineno);
    }
    next("stage count");
    std::size_t count = 0;
    {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key >> count) || key != "stages") {
            throw ParseError("expected 'stages <count>'", lineno);
        }
    }
    std::vector<ClusterMap> maps(count);
    for (std::size_t s = 0; s < count; ++s) {
        auto expect_prefix = [&](const std::string& field) {
            const std::string prefix = "stage " + std::to_string(s) + ": " + field;
            if (line.rfind(prefix, 0) != 0) {
                throw ParseError("expected '" + prefix + "'", lineno);
            }
            return std::istringstream(line.substr(prefix.size()));
        };
        std::size_t points = 0;
        std::size_t samples = 0;
        next("stage header");
        {
            auto ss = expect_prefix("points");
            std::string key;
            if (!(ss >> points >> key >> samples) || key != "samples") {
                throw ParseError("malformed stage header", lineno);
            }
        }
        auto read_list = [&](const std::string& field, std::size_t expected) {
            next(field.c_str());
            auto ss = expect_prefix(field);
            std::vector<std::size_t> v;
            std::size_t x = 0;
            while (ss >> x) {
                v.push_back(x);
            }
            if (v.size() != expected) {
                throw ParseError(field + ": expected " + std::to_string(expected) + " values, found " +
                                     std::to_string(v.size()),
                                 lineno);
            }
            return v;
        };
        maps[s].stage_id = s;
        maps[s].sample_indices = read_list("sample_indices", samples);
        maps[s].assignment = read_list("assignment", points);
    }
    return maps;
}

} // namespace dctkit
