#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "umbra/agent.hpp"

namespace umbra {

// Metric CSV schema v1 (docs/formats.md): header row then one row per env
// step. Deterministic columns only; wall-clock goes to a separate timings
// file so two identically seeded runs produce byte-identical metric files.

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

class MetricWriter {
public:
    MetricWriter(const std::string& metrics_path, const std::string& timings_path, int members)
        : metrics_(metrics_path, std::ios::binary), timings_(timings_path, std::ios::binary) {
        if (!metrics_) throw std::runtime_error("metrics: cannot open '" + metrics_path + "'");
        if (!timings_) throw std::runtime_error("metrics: cannot open '" + timings_path + "'");
        metrics_ << "t,episode";
        for (int k = 0; k < members; ++k) metrics_ << ",dyn_loss_" << k;
        metrics_ << ",reward_loss,mu,sigma,utility,grad_norm,eval_return\r\n";
        timings_ << "t,wall_ms\r\n";
    }

    void write(const MetricRow& row) {
        metrics_ << row.t << ',' << row.episode;
        for (double l : row.dyn_losses) metrics_ << ',' << format_double(l);
        metrics_ << ',' << format_double(row.reward_loss) << ',' << format_double(row.mu) << ','
                 << format_double(row.sigma) << ',' << format_double(row.utility) << ','
                 << format_double(row.grad_norm) << ',';
        if (row.eval_return) metrics_ << format_double(*row.eval_return);
        metrics_ << "\r\n";
        timings_ << row.t << ',' << format_double(row.wall_ms) << "\r\n";
        // evaluation rows close an episode; make the file crash-resumable
        if (row.eval_return) {
            metrics_.flush();
            timings_.flush();
        }
    }

private:
    std::ofstream metrics_;
    std::ofstream timings_;
};

struct MetricTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::optional<double>>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return static_cast<int>(i);
        throw std::invalid_argument("metrics: no column '" + name + "'");
    }
};

inline MetricTable read_metrics_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("metrics: cannot open '" + path + "'");
    MetricTable table;
    std::string line;
    bool header = true;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (header) {
            table.columns = cells;
            header = false;
            continue;
        }
        std::vector<std::optional<double>> row;
        for (const auto& c : cells)
            row.push_back(c.empty() ? std::optional<double>{} : std::stod(c));
        while (row.size() < table.columns.size()) row.emplace_back();
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace umbra
