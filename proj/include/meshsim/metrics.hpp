#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "meshsim/param_vector.hpp"

namespace meshsim {

enum class TrajectoryFormat { csv, jsonl };

inline TrajectoryFormat trajectory_format_from_string(const std::string& s) {
  if (s == "csv") return TrajectoryFormat::csv;
  if (s == "jsonl") return TrajectoryFormat::jsonl;
  throw std::invalid_argument("unknown trajectory format: " + s);
}

// One evaluation row. consensus_error is ||delta||^2 = sum_i ||w_i - mean||^2;
// consensus_error_mean is the same divided by m*d. The trailing EMA columns
// diagnose the drift assumption: the norm of the cross-replica mean of d_i
// and the norm of its first difference between evals.
struct MetricsRecord {
  std::int64_t step = 0;
  std::vector<double> replica_losses;
  double consensus_loss = 0.0;
  double consensus_error = 0.0;
  double ema_var_mean = 0.0;
  double ema_var_max = 0.0;
  bool diverged = false;
  std::int64_t inflight = 0;
  double consensus_error_mean = 0.0;
  double ema_dmean_norm = 0.0;
  double ema_ddrift_norm = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

inline double consensus_error(std::span<const ParamVector> replicas) {
  if (replicas.empty()) throw std::logic_error("consensus_error: no replicas");
  const ParamVector mean = vec_mean(replicas);
  double s = 0.0;
  for (const auto& r : replicas) {
    for (std::size_t k = 0; k < mean.size(); ++k) {
      const double d = r.values[k] - mean.values[k];
      s += d * d;
    }
  }
  return s;
}

// Population variance of each coordinate of d_i across replicas; returns
// (mean, max) over coordinates. Zeros when fewer than two replicas.
inline std::pair<double, double> ema_variance(std::span<const ParamVector> d) {
  if (d.size() < 2) return {0.0, 0.0};
  const std::size_t m = d.size(), n = d[0].size();
  double sum = 0.0, mx = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += d[i].values[k];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double dd = d[i].values[k] - mu;
      var += dd * dd;
    }
    var /= static_cast<double>(m);
    sum += var;
    mx = std::max(mx, var);
  }
  return {sum / static_cast<double>(n), mx};
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> trajectory_columns(std::size_t replicas) {
  std::vector<std::string> cols;
  cols.emplace_back("step");
  for (std::size_t i = 0; i < replicas; ++i) cols.push_back("loss_" + std::to_string(i));
  for (const char* c : {"consensus_loss", "consensus_error", "ema_var_mean", "ema_var_max",
                        "diverged", "inflight", "consensus_error_mean", "ema_dmean_norm",
                        "ema_ddrift_norm"})
    cols.emplace_back(c);
  return cols;
}

inline std::vector<std::string> record_values(const MetricsRecord& r) {
  std::vector<std::string> out;
  out.push_back(std::to_string(r.step));
  for (double l : r.replica_losses) out.push_back(fmt_double(l));
  out.push_back(fmt_double(r.consensus_loss));
  out.push_back(fmt_double(r.consensus_error));
  out.push_back(fmt_double(r.ema_var_mean));
  out.push_back(fmt_double(r.ema_var_max));
  out.push_back(r.diverged ? "1" : "0");
  out.push_back(std::to_string(r.inflight));
  out.push_back(fmt_double(r.consensus_error_mean));
  out.push_back(fmt_double(r.ema_dmean_norm));
  out.push_back(fmt_double(r.ema_ddrift_norm));
  return out;
}

}  // namespace detail

inline void write_trajectory(const std::vector<MetricsRecord>& records, const std::string& path,
                             TrajectoryFormat format) {
  if (records.empty()) throw std::invalid_argument("write_trajectory: no records");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trajectory: cannot open " + path);
  const auto cols = detail::trajectory_columns(records[0].replica_losses.size());
  if (format == TrajectoryFormat::csv) {
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
    out << '\n';
    for (const auto& r : records) {
      const auto vals = detail::record_values(r);
      for (std::size_t c = 0; c < vals.size(); ++c) out << (c ? "," : "") << vals[c];
      out << '\n';
    }
  } else {
    // Flat objects, same field names as the csv columns, doubles at 17
    // significant digits so values round-trip exactly. Non-finite values
    // (possible in a diverged final record) become null.
    const auto num = [](double v) {
      return std::isfinite(v) ? detail::fmt_double(v) : std::string("null");
    };
    for (const auto& r : records) {
      out << "{\"step\":" << r.step;
      for (std::size_t i = 0; i < r.replica_losses.size(); ++i)
        out << ",\"loss_" << i << "\":" << num(r.replica_losses[i]);
      out << ",\"consensus_loss\":" << num(r.consensus_loss);
      out << ",\"consensus_error\":" << num(r.consensus_error);
      out << ",\"ema_var_mean\":" << num(r.ema_var_mean);
      out << ",\"ema_var_max\":" << num(r.ema_var_max);
      out << ",\"diverged\":" << (r.diverged ? "true" : "false");
      out << ",\"inflight\":" << r.inflight;
      out << ",\"consensus_error_mean\":" << num(r.consensus_error_mean);
      out << ",\"ema_dmean_norm\":" << num(r.ema_dmean_norm);
      out << ",\"ema_ddrift_norm\":" << num(r.ema_ddrift_norm);
      out << "}\n";
    }
  }
  if (!out) throw std::runtime_error("write_trajectory: write failed for " + path);
}

inline std::vector<MetricsRecord> read_trajectory(const std::string& path,
                                                  TrajectoryFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_trajectory: cannot open " + path);
  std::vector<MetricsRecord> records;
  std::string line;
  if (format == TrajectoryFormat::csv) {
    if (!std::getline(in, line)) throw std::runtime_error("read_trajectory: empty file " + path);
    std::size_t replicas = 0;
    {
      std::stringstream hs(line);
      std::string col;
      while (std::getline(hs, col, ','))
        if (col.rfind("loss_", 0) == 0) ++replicas;
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (cells.size() != replicas + 10)
        throw std::runtime_error("read_trajectory: bad row in " + path);
      MetricsRecord r;
      std::size_t c = 0;
      r.step = std::stoll(cells[c++]);
      r.replica_losses.resize(replicas);
      for (std::size_t i = 0; i < replicas; ++i) r.replica_losses[i] = std::stod(cells[c++]);
      r.consensus_loss = std::stod(cells[c++]);
      r.consensus_error = std::stod(cells[c++]);
      r.ema_var_mean = std::stod(cells[c++]);
      r.ema_var_max = std::stod(cells[c++]);
      r.diverged = cells[c++] == "1";
      r.inflight = std::stoll(cells[c++]);
      r.consensus_error_mean = std::stod(cells[c++]);
      r.ema_dmean_norm = std::stod(cells[c++]);
      r.ema_ddrift_norm = std::stod(cells[c++]);
      records.push_back(std::move(r));
    }
  } else {
    const auto num = [](const nlohmann::json& j, const char* key) {
      const auto& v = j.at(key);
      return v.is_null() ? std::nan("") : v.get<double>();
    };
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      MetricsRecord r;
      r.step = j.at("step").get<std::int64_t>();
      for (std::size_t i = 0; j.contains("loss_" + std::to_string(i)); ++i)
        r.replica_losses.push_back(num(j, ("loss_" + std::to_string(i)).c_str()));
      r.consensus_loss = num(j, "consensus_loss");
      r.consensus_error = num(j, "consensus_error");
      r.ema_var_mean = num(j, "ema_var_mean");
      r.ema_var_max = num(j, "ema_var_max");
      r.diverged = j.at("diverged").get<bool>();
      r.inflight = j.at("inflight").get<std::int64_t>();
      r.consensus_error_mean = num(j, "consensus_error_mean");
      r.ema_dmean_norm = num(j, "ema_dmean_norm");
      r.ema_ddrift_norm = num(j, "ema_ddrift_norm");
      records.push_back(std::move(r));
    }
  }
  return records;
}

}  // namespace meshsim
