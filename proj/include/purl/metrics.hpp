#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "purl/errors.hpp"

namespace purl {

inline constexpr const char* kMetricsHeader =
    "run,seed,episode,step,layer,alpha,layer_sparsity,global_sparsity,accuracy,reward,ms";

struct RunRecord {
  std::string run;
  std::uint64_t seed = 0;
  std::size_t episode = 0;
  std::size_t step = 0;
  std::size_t layer = 0;
  double alpha = 0.0;
  double layer_sparsity = 0.0;
  double global_sparsity = 0.0;
  double accuracy = 0.0;
  double reward = 0.0;
  double ms = 0.0;
};

// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

inline std::string to_csv_row(const RunRecord& r) {
  char ms[32];
  std::snprintf(ms, sizeof(ms), "%.3f", r.ms);
  std::ostringstream os;
  os << r.run << ',' << r.seed << ',' << r.episode << ',' << r.step << ',' << r.layer << ','
     << format_double(r.alpha) << ',' << format_double(r.layer_sparsity) << ','
     << format_double(r.global_sparsity) << ',' << format_double(r.accuracy) << ','
     << format_double(r.reward) << ',' << ms;
  return os.str();
}

// Appends rows and flushes after each one, so an interrupted run leaves a
// valid prefix on disk.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path) : os_(path, std::ios::trunc) {
    if (!os_) throw IoError("cannot write metrics " + path.string());
    os_ << kMetricsHeader << '\n';
    os_.flush();
  }

  void write(const RunRecord& r) {
    os_ << to_csv_row(r) << '\n';
    os_.flush();
    if (!os_) throw IoError("failed writing metrics row");
  }

 private:
  std::ofstream os_;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <class T>
T parse_field(const std::string& s, std::size_t line_no) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("bad metrics field '" + s + "' on line " + std::to_string(line_no), line_no);
  }
  return v;
}

}  // namespace detail

inline std::vector<RunRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open metrics " + path.string());
  std::string line;
  if (!std::getline(is, line) || (line != kMetricsHeader && line != std::string(kMetricsHeader) + "\r")) {
    throw FormatError("metrics file " + path.string() + " lacks the expected header", 0);
  }
  std::vector<RunRecord> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 11) throw FormatError("expected 11 fields on line " + std::to_string(line_no), line_no);
    RunRecord r;
    r.run = f[0];
    r.seed = detail::parse_field<std::uint64_t>(f[1], line_no);
    r.episode = detail::parse_field<std::size_t>(f[2], line_no);
    r.step = detail::parse_field<std::size_t>(f[3], line_no);
    r.layer = detail::parse_field<std::size_t>(f[4], line_no);
    r.alpha = detail::parse_field<double>(f[5], line_no);
    r.layer_sparsity = detail::parse_field<double>(f[6], line_no);
    r.global_sparsity = detail::parse_field<double>(f[7], line_no);
    r.accuracy = detail::parse_field<double>(f[8], line_no);
    r.reward = detail::parse_field<double>(f[9], line_no);
    r.ms = detail::parse_field<double>(f[10], line_no);
    out.push_back(std::move(r));
  }
  return out;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample standard deviation / sqrt(n); 0 for n < 2
  std::size_t n = 0;
};

inline MeanSe mean_se(std::span<const double> xs) {
  MeanSe m;
  m.n = xs.size();
  if (xs.empty()) return m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double sq = 0.0;
    for (double x : xs) sq += (x - m.mean) * (x - m.mean);
    const double sd = std::sqrt(sq / static_cast<double>(xs.size() - 1));
    m.se = sd / std::sqrt(static_cast<double>(xs.size()));
  }
  return m;
}

struct RunSummary {
  std::string run;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  std::size_t steps = 0;
  double terminal_sparsity = 0.0;
  double terminal_accuracy = 0.0;
  std::optional<std::size_t> episodes_to_threshold;  // first episode whose terminal reward >= threshold
  std::vector<double> reward_curve;                  // total reward per episode
  std::vector<double> terminal_rewards;
};

// Aggregates a record stream per run id, in first-seen order. Uses nothing
// but the records themselves.
inline std::vector<RunSummary> summarize(std::span<const RunRecord> records, double reward_threshold) {
  std::vector<RunSummary> out;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::size_t> last_episode;
  for (const auto& r : records) {
    auto it = index.find(r.run);
    if (it == index.end()) {
      it = index.emplace(r.run, out.size()).first;
      out.push_back({});
      out.back().run = r.run;
      out.back().seed = r.seed;
    }
    RunSummary& s = out[it->second];
    const bool new_episode = s.reward_curve.empty() || last_episode[r.run] != r.episode;
    if (new_episode) {
      s.reward_curve.push_back(0.0);
      s.terminal_rewards.push_back(0.0);
      last_episode[r.run] = r.episode;
    }
    s.reward_curve.back() += r.reward;
    s.terminal_rewards.back() = r.reward;
    s.terminal_sparsity = r.global_sparsity;
    s.terminal_accuracy = r.accuracy;
    ++s.steps;
  }
  for (auto& s : out) {
    s.episodes = s.reward_curve.size();
    for (std::size_t e = 0; e < s.terminal_rewards.size(); ++e) {
      if (s.terminal_rewards[e] >= reward_threshold) {
        s.episodes_to_threshold = e;
        break;
      }
    }
  }
  return out;
}

inline nlohmann::json summaries_to_json(std::span<const RunSummary> runs, double reward_threshold) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : runs) {
    arr.push_back({
        {"run", s.run},
        {"seed", s.seed},
        {"episodes", s.episodes},
        {"steps", s.steps},
        {"terminal_sparsity", s.terminal_sparsity},
        {"terminal_accuracy", s.terminal_accuracy},
        {"episodes_to_threshold",
         s.episodes_to_threshold ? nlohmann::json(*s.episodes_to_threshold) : nlohmann::json()},
        {"reward_curve", s.reward_curve},
    });
  }
  return {{"reward_threshold", reward_threshold}, {"runs", arr}};
}

}  // namespace purl
