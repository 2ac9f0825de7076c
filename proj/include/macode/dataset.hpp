#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "macode/error.hpp"
#include "macode/rng.hpp"

namespace macode {

enum class ColumnKind { Continuous, Categorical };

inline std::string_view to_string(ColumnKind kind) {
  return kind == ColumnKind::Continuous ? "continuous" : "categorical";
}

/// One column of a schema. Categorical columns carry their level dictionary;
/// level `levels[k]` is stored in a Table as the 1-based index k + 1, leaving 0
/// free for the mask token.
struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  std::vector<std::string> levels;

  std::size_t num_levels() const { return levels.size(); }
  bool is_continuous() const { return kind == ColumnKind::Continuous; }
  bool is_categorical() const { return kind == ColumnKind::Categorical; }

  friend bool operator==(const ColumnSpec&, const ColumnSpec&) = default;
};

using Schema = std::vector<ColumnSpec>;

inline void validate_schema(const Schema& schema) {
  if (schema.empty()) throw InvalidArgument("schema has no columns");
  std::set<std::string> seen;
  for (const auto& col : schema) {
    if (!seen.insert(col.name).second) throw InvalidArgument("duplicate column name '" + col.name + "'");
    if (col.is_categorical()) {
      if (col.num_levels() < 2)
        throw InvalidArgument("categorical column '" + col.name + "' needs at least 2 levels");
      std::set<std::string> lv(col.levels.begin(), col.levels.end());
      if (lv.size() != col.levels.size())
        throw InvalidArgument("categorical column '" + col.name + "' has duplicate levels");
    } else if (!col.levels.empty()) {
      throw InvalidArgument("continuous column '" + col.name + "' must not declare levels");
    }
  }
}

/// Row-major n x p table of cells plus the missing-indicator matrix r
/// (1 = observed). Values of unobserved cells are unspecified and must not be read.
class Table {
 public:
  Table() = default;

  Table(Schema schema, std::size_t rows, std::vector<double> values, std::vector<std::uint8_t> observed)
      : schema_(std::move(schema)), rows_(rows), values_(std::move(values)), observed_(std::move(observed)) {
    validate_schema(schema_);
    const std::size_t p = schema_.size();
    if (values_.size() != rows_ * p || observed_.size() != rows_ * p)
      throw ShapeMismatch("table storage does not match " + std::to_string(rows_) + "x" + std::to_string(p));
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        if (!this->observed(i, j)) continue;
        const double v = this->value(i, j);
        if (!std::isfinite(v)) throw InvalidArgument("non-finite observed cell");
        if (schema_[j].is_categorical()) {
          if (v != std::floor(v) || v < 1.0 || v > static_cast<double>(schema_[j].num_levels()))
            throw InvalidArgument("categorical cell out of level range in column '" + schema_[j].name + "'");
        }
      }
    }
  }

  /// Fully observed table.
  Table(const Schema& schema, std::size_t rows, const std::vector<double>& values)
      : Table(schema, rows, values, std::vector<std::uint8_t>(values.size(), 1)) {}

  const Schema& schema() const { return schema_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return schema_.size(); }

  double value(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }
  bool observed(std::size_t i, std::size_t j) const { return observed_[i * cols() + j] != 0; }

  std::span<const double> values() const { return values_; }
  std::span<const std::uint8_t> observed_mask() const { return observed_; }

  bool fully_observed() const {
    return std::all_of(observed_.begin(), observed_.end(), [](std::uint8_t r) { return r != 0; });
  }

  std::size_t missing_count() const {
    return static_cast<std::size_t>(std::count(observed_.begin(), observed_.end(), std::uint8_t{0}));
  }

  /// Observed values of column j, in row order.
  std::vector<double> observed_column(std::size_t j) const {
    std::vector<double> out;
    out.reserve(rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      if (observed(i, j)) out.push_back(value(i, j));
    return out;
  }

  Table with_observed(std::vector<std::uint8_t> observed) const {
    return Table(schema_, rows_, values_, std::move(observed));
  }

  Table select_rows(std::span<const std::size_t> rows) const {
    const std::size_t p = cols();
    std::vector<double> v;
    std::vector<std::uint8_t> r;
    v.reserve(rows.size() * p);
    r.reserve(rows.size() * p);
    for (std::size_t i : rows) {
      if (i >= rows_) throw IndexOutOfRange("row " + std::to_string(i));
      v.insert(v.end(), values_.begin() + static_cast<std::ptrdiff_t>(i * p),
               values_.begin() + static_cast<std::ptrdiff_t>((i + 1) * p));
      r.insert(r.end(), observed_.begin() + static_cast<std::ptrdiff_t>(i * p),
               observed_.begin() + static_cast<std::ptrdiff_t>((i + 1) * p));
    }
    return Table(schema_, rows.size(), std::move(v), std::move(r));
  }

  std::size_t column_index(std::string_view name) const {
    for (std::size_t j = 0; j < cols(); ++j)
      if (schema_[j].name == name) return j;
    throw InvalidArgument("no column named '" + std::string(name) + "'");
  }

 private:
  Schema schema_;
  std::size_t rows_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> observed_;
};

// ---------------------------------------------------------------------------
// Schema sidecar: {"columns": [{"name": ..., "kind": "continuous"|"categorical", "levels": [...]}]}

inline nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : schema) {
    nlohmann::json o;
    o["name"] = c.name;
    o["kind"] = std::string(to_string(c.kind));
    if (c.is_categorical()) o["levels"] = c.levels;
    cols.push_back(std::move(o));
  }
  return nlohmann::json{{"columns", cols}};
}

inline Schema schema_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("columns") || !doc["columns"].is_array())
    throw ConfigError("schema must be an object with a 'columns' array");
  Schema schema;
  for (const auto& c : doc["columns"]) {
    for (const auto& [key, _] : c.items())
      if (key != "name" && key != "kind" && key != "levels")
        throw ConfigError("unknown schema key '" + key + "'");
    if (!c.contains("name") || !c.contains("kind")) throw ConfigError("schema column needs 'name' and 'kind'");
    ColumnSpec spec;
    spec.name = c["name"].get<std::string>();
    const auto kind = c["kind"].get<std::string>();
    if (kind == "continuous") {
      spec.kind = ColumnKind::Continuous;
    } else if (kind == "categorical") {
      spec.kind = ColumnKind::Categorical;
      if (!c.contains("levels")) throw ConfigError("categorical column '" + spec.name + "' needs 'levels'");
      spec.levels = c["levels"].get<std::vector<std::string>>();
    } else {
      throw ConfigError("unknown column kind '" + kind + "'");
    }
    schema.push_back(std::move(spec));
  }
  try {
    validate_schema(schema);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return schema;
}

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schema file '" + path + "' is not valid JSON: " + e.what());
  }
  return schema_from_json(doc);
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

namespace detail {

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

/// Reads one record; quoted fields may span lines. Returns false at EOF.
inline bool read_csv_record(std::istream& in, CsvRecord& rec, std::size_t& line) {
  rec.fields.clear();
  int c = in.peek();
  if (c == std::char_traits<char>::eof()) return false;
  rec.line = ++line;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (;;) {
    c = in.get();
    if (c == std::char_traits<char>::eof()) {
      if (quoted) throw ParseError(rec.line, "", "unterminated quoted field");
      rec.fields.push_back(std::move(field));
      return true;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      rec.fields.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (ch == '\r' && in.peek() == '\n') {
      continue;
    } else if (ch == '\n') {
      rec.fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(ch);
      field_started = true;
    }
  }
}

inline void write_csv_field(std::ostream& out, std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
    out << field;
    return;
  }
  out << '"';
  for (char ch : field) {
    if (ch == '"') out << '"';
    out << ch;
  }
  out << '"';
}

/// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Parses a CSV stream against an explicit schema. Empty cells and "NA" are missing.
inline Table parse_csv(std::istream& in, const Schema& schema) {
  validate_schema(schema);
  std::size_t line = 0;
  detail::CsvRecord rec;
  if (!detail::read_csv_record(in, rec, line)) throw HeaderMismatch("empty file, header row required");
  std::vector<std::string> expected;
  for (const auto& c : schema) expected.push_back(c.name);
  if (!rec.fields.empty() && !rec.fields[0].empty() && rec.fields[0].rfind("\xEF\xBB\xBF", 0) == 0)
    rec.fields[0].erase(0, 3);
  if (rec.fields != expected) {
    std::string got;
    for (std::size_t k = 0; k < rec.fields.size(); ++k) got += (k ? "," : "") + rec.fields[k];
    throw HeaderMismatch("header '" + got + "' does not match schema column order");
  }
  const std::size_t p = schema.size();
  std::vector<double> values;
  std::vector<std::uint8_t> observed;
  std::size_t rows = 0;
  while (detail::read_csv_record(in, rec, line)) {
    // A blank final line is only data when the table has a single column.
    if (p > 1 && rec.fields.size() == 1 && rec.fields[0].empty() && in.peek() == std::char_traits<char>::eof())
      break;
    ++rows;
    if (rec.fields.size() != p)
      throw ParseError(rows, "", "expected " + std::to_string(p) + " fields, got " + std::to_string(rec.fields.size()));
    for (std::size_t j = 0; j < p; ++j) {
      const std::string& cell = rec.fields[j];
      if (cell.empty() || cell == "NA") {
        values.push_back(std::nan(""));
        observed.push_back(0);
        continue;
      }
      const auto& col = schema[j];
      if (col.is_continuous()) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
          throw ParseError(rows, col.name, "cannot parse '" + cell + "' as a finite number");
        values.push_back(v);
      } else {
        auto it = std::find(col.levels.begin(), col.levels.end(), cell);
        if (it == col.levels.end())
          throw UnknownCategory("row " + std::to_string(rows) + ", column '" + col.name + "': '" + cell + "'");
        values.push_back(static_cast<double>(it - col.levels.begin() + 1));
      }
      observed.push_back(1);
    }
  }
  if (rows == 0) throw ParseError(0, "", "no data rows");
  return Table(schema, rows, std::move(values), std::move(observed));
}

inline Table load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open CSV file '" + path + "'");
  return parse_csv(in, schema);
}

inline void write_csv(std::ostream& out, const Table& table) {
  const auto& schema = table.schema();
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (j) out << ',';
    detail::write_csv_field(out, schema[j].name);
  }
  out << '\n';
  for (std::size_t i = 0; i < table.rows(); ++i) {
    for (std::size_t j = 0; j < schema.size(); ++j) {
      if (j) out << ',';
      if (!table.observed(i, j)) continue;
      const double v = table.value(i, j);
      if (schema[j].is_continuous())
        out << detail::format_double(v);
      else
        detail::write_csv_field(out, schema[j].levels[static_cast<std::size_t>(v) - 1]);
    }
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write CSV file '" + path + "'");
  write_csv(out, table);
}

/// Seeded shuffle, then prefix split. Each part keeps the original relative row order.
inline std::pair<Table, Table> split(const Table& table, double train_fraction, std::uint64_t seed) {
  if (table.rows() < 2) throw InvalidArgument("split needs at least 2 rows");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidArgument("train_fraction must be in (0,1)");
  std::vector<std::size_t> idx(table.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_stream(seed, "split");
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(table.rows())));
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {table.select_rows(train), table.select_rows(test)};
}

}  // namespace macode
