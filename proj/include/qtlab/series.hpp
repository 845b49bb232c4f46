#pragma once

#include <string>
#include <vector>

#include "qtlab/grid.hpp"

namespace qtlab {

// Column-named table of observations, one row per sample.
struct Series {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    Series() = default;
    explicit Series(std::vector<std::string> cols) : columns(std::move(cols)) {}

    void add(std::vector<double> row)
    {
        if (row.size() != columns.size()) throw Error("series: row width differs from column count");
        rows.push_back(std::move(row));
    }
    std::size_t index(const std::string& name) const
    {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw Error("series: no column named " + name);
    }
    std::vector<double> column(const std::string& name) const
    {
        std::size_t c = index(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (auto& r : rows) out.push_back(r[c]);
        return out;
    }
    std::vector<std::pair<double, double>> pairs(const std::string& x, const std::string& y) const
    {
        std::size_t a = index(x), b = index(y);
        std::vector<std::pair<double, double>> out;
        for (auto& r : rows) out.emplace_back(r[a], r[b]);
        return out;
    }
    bool empty() const { return rows.empty(); }
    bool operator==(const Series&) const = default;
};

} // namespace qtlab
