#pragma once

#include "errors.hpp"
#include "params.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

namespace dctkit {

inline constexpr const char* checkpoint_magic = "DCTKIT v1";

// Checkpoint layout:
//   DCTKIT v1
//   <name> <rows> <cols>
//   <rows lines of cols values>
//   ...
template <typename T>
void save_checkpoint(const ParamStore<T>& store, std::ostream& os) {
    os << checkpoint_magic << '\n';
    os.precision(std::numeric_limits<T>::max_digits10);
    for (const auto& p : store) {
        os << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << '\n';
        for (std::size_t r = 0; r < p.value.rows(); ++r) {
            for (std::size_t c = 0; c < p.value.cols(); ++c) {
                os << (c ? " " : "") << p.value(r, c);
            }
            os << '\n';
        }
    }
}

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        throw ParseError("cannot open checkpoint '" + path + "' for writing", 0);
    }
    save_checkpoint(store, os);
}

/// Loads values into an already-registered store. The file must name exactly the store's parameters.
template <typename T>
void load_checkpoint(ParamStore<T>& store, std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    auto next = [&](const char* what) {
        if (!std::getline(is, line)) {
            throw ParseError(std::string("unexpected end of checkpoint, expected ") + what, lineno + 1);
        }
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
    };
    next("version line");
    if (line != checkpoint_magic) {
        throw ParseError("unsupported checkpoint version '" + line + "'", lineno);
    }
    std::set<std::string> seen;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::istringstream head(line);
        std::string name;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::string extra;
        if (!(head >> name >> rows >> cols) || (head >> extra)) {
            throw ParseError("malformed parameter header '" + line + "'", lineno);
        }
        if (!store.contains(name)) {
            throw ParseError("unknown parameter '" + name + "'", lineno);
        }
        if (!seen.insert(name).second) {
            throw ParseError("parameter '" + name + "' repeated", lineno);
        }
        auto& p = store.at(name);
        if (p.value.rows() != rows || p.value.cols() != cols) {
            throw ParseError("parameter '" + name + "' has shape " + std::to_string(rows) + "x" +
                                 std::to_string(cols) + ", expected " + p.value.shape_string(),
                             lineno);
        }
        for (std::size_t r = 0; r < rows; ++r) {
            next("matrix row");
            std::istringstream row(line);
            for (std::size_t c = 0; c < cols; ++c) {
                std::string tok;
                if (!(row >> tok)) {
                    throw ParseError("expected " + std::to_string(cols) + " values", lineno);
                }
                double v = 0;
                auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                if (ec != std::errc() || ptr != tok.data() + tok.size()) {
                    throw ParseError("non-numeric token '" + tok + "'", lineno);
                }
                p.value(r, c) = static_cast<T>(v);
            }
            std::string extra_tok;
            if (row >> extra_tok) {
                throw ParseError("too many values in row", lineno);
            }
        }
    }
    for (const auto& p : store) {
        if (seen.count(p.name) == 0) {
            throw ParseError("checkpoint is missing parameter '" + p.name + "'", 0);
        }
    }
}

template <typename T>
void load_checkpoint(ParamStore<T>& store, const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw ParseError("cannot open checkpoint '" + path + "'", 0);
    }
    load_checkpoint(store, is);
}

} // namespace dctkit
