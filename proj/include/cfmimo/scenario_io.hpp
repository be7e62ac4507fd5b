#pragma once

// Scenario CSV bundle: positions.csv, beta.csv, nu.csv, pilot_gram.csv and
// meta.txt (key=value). Reals are written with 17 significant digits so a
// bundle reads back bit-identical.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfmimo/scenario.hpp"

namespace cfmimo {

namespace io {

inline std::string fmt_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_real(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::runtime_error("not a number: '" + s + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return in;
}

inline void write_matrix_csv(const std::filesystem::path& p, const Matrix& a) {
  auto out = open_out(p);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (c) out << ',';
      out << fmt_real(a(r, c));
    }
    out << '\n';
  }
}

inline Matrix read_matrix_csv(const std::filesystem::path& p) {
  auto in = open_in(p);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& f : split(line, ',')) row.push_back(parse_real(f));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error(p.string() + ": ragged row");
    rows.push_back(std::move(row));
  }
  Matrix a(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return a;
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& p) {
  auto in = open_in(p);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(p.string() + ": expected key=value, got '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace io

inline void write_scenario_bundle(const Scenario& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = io::open_out(dir / "positions.csv");
    out << "kind,index,x_km,y_km\n";
    for (Eigen::Index m = 0; m < s.ap_pos.rows(); ++m)
      out << "ap," << m << ',' << io::fmt_real(s.ap_pos(m, 0)) << ',' << io::fmt_real(s.ap_pos(m, 1)) << '\n';
    for (Eigen::Index k = 0; k < s.user_pos.rows(); ++k)
      out << "user," << k << ',' << io::fmt_real(s.user_pos(k, 0)) << ',' << io::fmt_real(s.user_pos(k, 1)) << '\n';
  }
  io::write_matrix_csv(dir / "beta.csv", s.beta);
  io::write_matrix_csv(dir / "nu.csv", s.nu);
  io::write_matrix_csv(dir / "pilot_gram.csv", s.pilot_gram);

  auto meta = io::open_out(dir / "meta.txt");
  meta << "M=" << s.M << '\n'
       << "K=" << s.K << '\n'
       << "N=" << s.N << '\n'
       << "D_km=" << io::fmt_real(s.D_km) << '\n'
       << "zeta_d=" << io::fmt_real(s.zeta_d) << '\n'
       << "zeta_p=" << io::fmt_real(s.zeta_p) << '\n'
       << "prelog=" << io::fmt_real(s.prelog) << '\n'
       << "T_p=" << s.T_p << '\n'
       << "T_c=" << s.T_c << '\n'
       << "seed=" << s.seed << '\n'
       << "pilot_of_user=";
  for (std::size_t k = 0; k < s.pilot_of_user.size(); ++k) meta << (k ? "," : "") << s.pilot_of_user[k];
  meta << '\n';
}

inline Scenario read_scenario_bundle(const std::filesystem::path& dir) {
  const auto kv = io::read_key_values(dir / "meta.txt");
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("meta.txt: missing key " + key);
    return it->second;
  };
  Scenario s;
  s.M = std::stoi(get("M"));
  s.K = std::stoi(get("K"));
  s.N = std::stoi(get("N"));
  s.D_km = io::parse_real(get("D_km"));
  s.zeta_d = io::parse_real(get("zeta_d"));
  s.zeta_p = io::parse_real(get("zeta_p"));
  s.prelog = io::parse_real(get("prelog"));
  s.T_p = std::stoi(get("T_p"));
  s.T_c = std::stoi(get("T_c"));
  s.seed = std::stoull(get("seed"));
  if (const auto& p = get("pilot_of_user"); !p.empty())
    for (const auto& f : io::split(p, ',')) s.pilot_of_user.push_back(std::stoi(f));

  s.ap_pos = Matrix::Zero(s.M, 2);
  s.user_pos = Matrix::Zero(s.K, 2);
  {
    auto in = io::open_in(dir / "positions.csv");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = io::split(line, ',');
      if (f.size() != 4) throw std::runtime_error("positions.csv: malformed row");
      const auto idx = std::stol(f[1]);
      Matrix& target = f[0] == "ap" ? s.ap_pos : s.user_pos;
      if (idx < 0 || idx >= target.rows()) throw std::runtime_error("positions.csv: index out of range");
      target(idx, 0) = io::parse_real(f[2]);
      target(idx, 1) = io::parse_real(f[3]);
    }
  }
  s.beta = io::read_matrix_csv(dir / "beta.csv");
  s.nu = io::read_matrix_csv(dir / "nu.csv");
  s.pilot_gram = io::read_matrix_csv(dir / "pilot_gram.csv");
  if (s.beta.rows() != s.M || s.beta.cols() != s.K || s.nu.rows() != s.M || s.nu.cols() != s.K ||
      s.pilot_gram.rows() != s.K || s.pilot_gram.cols() != s.K)
    throw std::runtime_error("scenario bundle: matrix shapes disagree with meta.txt");
  return s;
}

}  // namespace cfmimo
