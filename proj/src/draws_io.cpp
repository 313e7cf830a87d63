#include "nsum/draws_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "nsum/chain_stats.hpp"
#include "nsum/csv.hpp"

namespace nsum {

using nlohmann::json;

void write_draws_csv(const Draws& d, const std::string& path,
                     const std::vector<std::string>& skip_prefixes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  auto skipped = [&skip_prefixes](const std::string& name) {
    for (const auto& p : skip_prefixes)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  };
  std::vector<int> cols;
  for (int j = 0; j < d.dim(); ++j)
    if (!skipped(d.param_names[static_cast<std::size_t>(j)])) cols.push_back(j);

  // bracketed names carry commas; quote them so the long format stays 4 fields
  std::vector<std::string> quoted(d.param_names.size());
  for (std::size_t j = 0; j < d.param_names.size(); ++j) {
    const std::string& name = d.param_names[j];
    quoted[j] = name.find(',') == std::string::npos ? name : '"' + name + '"';
  }
  out << "chain,iter,param,value\n";
  char buf[64];
  for (int c = 0; c < d.num_chains(); ++c) {
    const Eigen::MatrixXd& m = d.values[static_cast<std::size_t>(c)];
    for (long it = 0; it < m.rows(); ++it) {
      for (int j : cols) {
        std::snprintf(buf, sizeof(buf), "%.17g", m(it, j));
        out << (c + 1) << ',' << (it + 1) << ',' << quoted[static_cast<std::size_t>(j)] << ','
            << buf << '\n';
      }
    }
  }
}

Draws read_draws_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.col("chain") != 0 || t.col("iter") != 1 || t.col("param") != 2 || t.col("value") != 3)
    throw std::runtime_error(path + ": expected header chain,iter,param,value");

  // first pass: parameter order (first appearance), chain count, iter count
  std::vector<std::string> names;
  std::map<std::string, int> name_idx;
  int max_chain = 0;
  long max_iter = 0;
  for (const auto& row : t.rows) {
    const std::string& p = row[2];
    if (!name_idx.count(p)) {
      name_idx[p] = static_cast<int>(names.size());
      names.push_back(p);
    }
    max_chain = std::max(max_chain, std::stoi(row[0]));
    max_iter = std::max(max_iter, std::stol(row[1]));
  }
  Draws d;
  d.param_names = names;
  d.values.assign(static_cast<std::size_t>(max_chain),
                  Eigen::MatrixXd::Constant(max_iter, static_cast<long>(names.size()),
                                            std::numeric_limits<double>::quiet_NaN()));
  for (const auto& row : t.rows) {
    const int c = std::stoi(row[0]) - 1;
    const long it = std::stol(row[1]) - 1;
    const int j = name_idx.at(row[2]);
    d.values[static_cast<std::size_t>(c)](it, j) = std::stod(row[3]);
  }
  for (const auto& m : d.values)
    if (m.hasNaN()) throw std::runtime_error(path + ": incomplete draws (missing cells)");
  d.chain_meta.resize(static_cast<std::size_t>(max_chain));
  return d;
}

void write_draws_bundle(const Draws& d, const std::string& dir,
                        const std::vector<std::string>& skip_prefixes) {
  write_draws_csv(d, dir + "/draws.csv", skip_prefixes);
  json j;
  j["seed"] = d.seed;
  j["warmup"] = d.warmup;
  j["thin"] = d.thin;
  j["divergence_warning"] = d.divergence_warning;
  json info = json::object();
  for (const auto& [k, v] : d.info) info[k] = v;
  j["info"] = info;
  json chains = json::array();
  for (const auto& m : d.chain_meta)
    chains.push_back({{"mean_accept", m.mean_accept},
                      {"step_size", m.step_size},
                      {"divergences", m.divergences}});
  j["chain_meta"] = chains;
  std::ofstream out(dir + "/draws_info.json");
  if (!out) throw std::runtime_error("cannot open for writing: " + dir + "/draws_info.json");
  out << j.dump(1) << '\n';
}

Draws read_draws_bundle(const std::string& dir) {
  Draws d = read_draws_csv(dir + "/draws.csv");
  std::ifstream in(dir + "/draws_info.json");
  if (in) {
    json j;
    in >> j;
    d.seed = j.value("seed", 0ull);
    d.warmup = j.value("warmup", 0);
    d.thin = j.value("thin", 1);
    d.divergence_warning = j.value("divergence_warning", false);
    if (j.contains("info"))
      for (const auto& [k, v] : j.at("info").items()) d.info[k] = v.get<std::string>();
    if (j.contains("chain_meta")) {
      d.chain_meta.clear();
      for (const auto& c : j.at("chain_meta")) {
        ChainMeta m;
        m.mean_accept = c.value("mean_accept", 0.0);
        m.step_size = c.value("step_size", 0.0);
        m.divergences = c.value("divergences", 0);
        d.chain_meta.push_back(m);
      }
    }
  }
  return d;
}

void write_summary_json(const Draws& d, const std::string& path) {
  json j;
  j["chains"] = d.num_chains();
  j["kept_iterations"] = d.kept();
  j["warmup"] = d.warmup;
  j["thin"] = d.thin;
  j["seed"] = d.seed;
  j["divergence_warning"] = d.divergence_warning;
  json chains = json::array();
  for (const auto& m : d.chain_meta) {
    chains.push_back({{"mean_accept", m.mean_accept},
                      {"step_size", m.step_size},
                      {"divergences", m.divergences}});
  }
  j["chain_meta"] = chains;
  for (const auto& [k, v] : d.info) j["info"][k] = v;

  json params = json::object();
  auto num = [](double v) -> json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  for (int idx = 0; idx < d.dim(); ++idx) {
    const ParamSummary s = summarize_param(d, idx);
    params[s.name] = {{"mean", num(s.mean)},   {"sd", num(s.sd)},     {"q2.5", num(s.q2_5)},
                      {"q25", num(s.q25)},     {"q50", num(s.q50)},   {"q75", num(s.q75)},
                      {"q97.5", num(s.q97_5)}, {"rhat", num(s.rhat)}, {"ess", num(s.ess)}};
  }
  j["params"] = params;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(1) << '\n';
}

}  // namespace nsum
