#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dagode/graphs.hpp"
#include "dagode/matrix.hpp"

namespace dagode {

/// n×d observations with column names, optional ground truth and
/// generator metadata (generator id, seed, parameters).
struct Dataset {
  Matrix x;
  std::vector<std::string> names;
  std::optional<Dag> truth;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t n() const noexcept { return x.rows(); }
  std::size_t d() const noexcept { return x.cols(); }
};

/// Throws ContractViolation when the invariants do not hold (n ≥ 1, no NaN,
/// names and truth match the width).
void validate(const Dataset& data);

std::vector<std::string> default_names(std::size_t d);

/// CSV with a header row of column names and a numeric body. Ragged rows,
/// non-numeric cells and empty input raise ParseError with the 1-based line.
Dataset parse_csv(const std::string& text);
Dataset read_csv(const std::filesystem::path& path);
std::string format_csv(const Matrix& x, const std::vector<std::string>& names);
void write_csv(const std::filesystem::path& path, const Matrix& x, const std::vector<std::string>& names);

/// Sidecar paths next to a dataset file: `<stem>.truth.tsv`, `<stem>.meta.json`.
std::filesystem::path truth_sidecar(const std::filesystem::path& csv);
std::filesystem::path meta_sidecar(const std::filesystem::path& csv);

/// Writes the CSV plus whichever sidecars apply.
void write_dataset(const std::filesystem::path& csv, const Dataset& data);
/// Reads the CSV and any sidecars found next to it.
Dataset read_dataset(const std::filesystem::path& csv);

/// Column-wise zero mean, unit variance (population variance). Constant
/// columns are only centered.
Matrix standardize(const Matrix& x);

}  // namespace dagode
