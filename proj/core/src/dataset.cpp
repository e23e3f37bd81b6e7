#include "dagode/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dagode/errors.hpp"

namespace dagode {

namespace {

std::string strip(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  s = s.substr(b);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(strip(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void validate(const Dataset& data) {
  if (data.n() < 1) throw ContractViolation("Dataset: needs at least one row");
  if (data.names.size() != data.d()) throw ContractViolation("Dataset: name count differs from column count");
  for (double v : data.x.data())
    if (std::isnan(v)) throw ContractViolation("Dataset: NaN entry");
  if (data.truth && data.truth->num_nodes() != data.d())
    throw ContractViolation("Dataset: truth graph node count differs from column count");
}

std::vector<std::string> default_names(std::size_t d) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < d; ++i) names.push_back("X" + std::to_string(i));
  return names;
}

Dataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  Dataset out;
  bool have_header = false;
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto cells = split_csv(line);
    if (!have_header) {
      for (const auto& c : cells)
        if (c.empty()) throw ParseError("csv: empty column name", lineno);
      out.names = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != out.names.size())
      throw ParseError("csv: expected " + std::to_string(out.names.size()) + " cells, found " +
                           std::to_string(cells.size()),
                       lineno);
    for (const auto& c : cells) {
      double v = 0.0;
      const char* first = c.data();
      const char* last = c.data() + c.size();
      if (!c.empty() && *first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (c.empty() || ec != std::errc() || ptr != last || std::isnan(v))
        throw ParseError("csv: non-numeric cell '" + c + "'", lineno);
      values.push_back(v);
    }
    ++rows;
  }
  if (!have_header) throw ParseError("csv: empty file", lineno == 0 ? 1 : lineno);
  if (rows == 0) throw ParseError("csv: no data rows", lineno + 1);
  out.x = Matrix(rows, out.names.size(), std::move(values));
  return out;
}

Dataset read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

std::string format_csv(const Matrix& x, const std::vector<std::string>& names) {
  if (names.size() != x.cols()) throw ContractViolation("format_csv: name count differs from column count");
  std::ostringstream out;
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x(r, c));
      out << (c ? "," : "") << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
  return out.str();
}

void write_csv(const std::filesystem::path& path, const Matrix& x, const std::vector<std::string>& names) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string(), 0);
  out << format_csv(x, names);
}

std::filesystem::path truth_sidecar(const std::filesystem::path& csv) {
  auto p = csv;
  return p.replace_extension(".truth.tsv");
}

std::filesystem::path meta_sidecar(const std::filesystem::path& csv) {
  auto p = csv;
  return p.replace_extension(".meta.json");
}

void write_dataset(const std::filesystem::path& csv, const Dataset& data) {
  validate(data);
  write_csv(csv, data.x, data.names);
  if (data.truth) write_edge_list(truth_sidecar(csv), *data.truth, data.names);
  std::ofstream meta(meta_sidecar(csv));
  if (!meta) throw ParseError("cannot write " + meta_sidecar(csv).string(), 0);
  meta << data.meta.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& csv) {
  Dataset data = read_csv(csv);
  if (std::filesystem::exists(truth_sidecar(csv))) {
    auto g = read_edge_list(truth_sidecar(csv), data.names);
    if (g.names != data.names) throw ParseError("truth sidecar: node names differ from dataset header", 0);
    data.truth = std::move(g.dag);
  }
  if (std::filesystem::exists(meta_sidecar(csv))) {
    try {
      data.meta = nlohmann::json::parse(read_file(meta_sidecar(csv)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("meta sidecar: ") + e.what(), 0);
    }
  }
  validate(data);
  return data;
}

Matrix standardize(const Matrix& x) {
  Matrix out = x;
  const double n = static_cast<double>(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= n;
    const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    for (std::size_t r = 0; r < x.rows(); ++r) out(r, c) = (x(r, c) - mean) * scale;
  }
  return out;
}

}  // namespace dagode
