#pragma once

// Flow-record ingestion: CSV parsing, label encoding, deduplication,
// reproducible stratified splits/folds and the two-file matrix snapshot.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "xtree/error.hpp"
#include "xtree/rng.hpp"

namespace xtree {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// number formatting

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw NumericalError("cannot format number");
    return std::string(buf, end);
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

/// Parses a finite real; nullopt on anything else (including inf/nan).
inline std::optional<double> parse_double(std::string_view text) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

using CsvRecord = std::vector<std::string>;

/// Splits CSV text into records. Quoted fields may contain commas, doubled
/// quotes and newlines. A trailing newline does not produce an empty record.
inline std::vector<CsvRecord> parse_csv_text(std::string_view text) {
    std::vector<CsvRecord> records;
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
    CsvRecord record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
        record.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            end_record();
        } else {
            field.push_back(c);
            field_started = true;
        }
        ++i;
    }
    if (in_quotes) throw ParseError("unterminated quoted field", records.size() + 1, record.size() + 1);
    if (field_started || !field.empty() || !record.empty()) end_record();
    return records;
}

inline std::string csv_escape(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// schema and matrix

struct DatasetSchema {
    std::vector<std::string> feature_names;
    std::vector<std::string> categorical_columns;
    std::string label_column;
    std::vector<std::string> class_names;

    void validate() const {
        if (feature_names.empty()) throw SchemaError("schema has no feature columns");
        if (std::find(feature_names.begin(), feature_names.end(), label_column) != feature_names.end())
            throw SchemaError("label column '" + label_column + "' is also listed as a feature");
        std::unordered_set<std::string> names(feature_names.begin(), feature_names.end());
        if (names.size() != feature_names.size()) throw SchemaError("duplicate feature names in schema");
        for (const auto& c : categorical_columns)
            if (!names.count(c)) throw SchemaError("categorical column '" + c + "' is not a feature");
        if (class_names.empty()) throw SchemaError("schema has no class names");
        std::unordered_set<std::string> classes(class_names.begin(), class_names.end());
        if (classes.size() != class_names.size()) throw SchemaError("duplicate class names in schema");
    }
};

inline void to_json(json& j, const DatasetSchema& s) {
    j = json{{"feature_names", s.feature_names},
             {"categorical_columns", s.categorical_columns},
             {"label_column", s.label_column},
             {"class_names", s.class_names}};
}

/// Dense row-major table of flow records with integer class labels.
struct FeatureMatrix {
    std::size_t n_rows = 0;
    std::vector<std::string> feature_names;
    std::vector<bool> categorical;  // per column
    std::vector<double> values;     // n_rows * n_cols, row-major
    std::vector<int> labels;
    std::vector<std::string> class_names;
    /// Categorical column name -> category strings indexed by code.
    std::map<std::string, std::vector<std::string>> encoder_map;

    std::size_t n_cols() const { return feature_names.size(); }
    std::size_t n_classes() const { return class_names.size(); }

    double at(std::size_t r, std::size_t c) const { return values[r * n_cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * n_cols() + c]; }

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(values).subspan(r * n_cols(), n_cols());
    }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(n_rows);
        for (std::size_t r = 0; r < n_rows; ++r) out[r] = at(r, c);
        return out;
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(n_classes(), 0);
        for (int y : labels) ++counts[static_cast<std::size_t>(y)];
        return counts;
    }

    std::optional<std::size_t> column_index(std::string_view name) const {
        for (std::size_t c = 0; c < feature_names.size(); ++c)
            if (feature_names[c] == name) return c;
        return std::nullopt;
    }

    /// Empty copy sharing the column metadata.
    FeatureMatrix like() const {
        FeatureMatrix m;
        m.feature_names = feature_names;
        m.categorical = categorical;
        m.class_names = class_names;
        m.encoder_map = encoder_map;
        return m;
    }

    void push_row(std::span<const double> row_values, int label) {
        values.insert(values.end(), row_values.begin(), row_values.end());
        labels.push_back(label);
        ++n_rows;
    }

    /// Throws DataError when an invariant is broken.
    void validate() const {
        if (categorical.size() != n_cols()) throw DataError("categorical flags do not match column count");
        if (values.size() != n_rows * n_cols()) throw DataError("value buffer does not match shape");
        if (labels.size() != n_rows) throw DataError("label vector does not match row count");
        for (double v : values)
            if (!std::isfinite(v)) throw DataError("non-finite value in feature matrix");
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= n_classes()) throw DataError("label out of range");
        std::unordered_set<std::string> names(feature_names.begin(), feature_names.end());
        if (names.size() != feature_names.size()) throw DataError("duplicate feature names");
    }
};

inline FeatureMatrix take_rows(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    FeatureMatrix out = m.like();
    out.values.reserve(rows.size() * m.n_cols());
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) out.push_row(m.row(r), m.labels[r]);
    return out;
}

inline FeatureMatrix select_columns(const FeatureMatrix& m, std::span<const std::size_t> cols) {
    FeatureMatrix out;
    out.class_names = m.class_names;
    for (std::size_t c : cols) {
        out.feature_names.push_back(m.feature_names[c]);
        out.categorical.push_back(m.categorical[c]);
        if (auto it = m.encoder_map.find(m.feature_names[c]); it != m.encoder_map.end())
            out.encoder_map.insert(*it);
    }
    out.n_rows = m.n_rows;
    out.labels = m.labels;
    out.values.reserve(m.n_rows * cols.size());
    for (std::size_t r = 0; r < m.n_rows; ++r)
        for (std::size_t c : cols) out.values.push_back(m.at(r, c));
    return out;
}

// ---------------------------------------------------------------------------
// load_csv

struct LoadOptions {
    /// Empty numeric cells become the column mean instead of an error.
    bool allow_missing = false;
};

inline FeatureMatrix parse_csv(std::string_view text, const DatasetSchema& schema, const LoadOptions& options = {}) {
    schema.validate();
    const auto records = parse_csv_text(text);
    if (records.empty()) throw DataError("empty CSV input");
    const CsvRecord& header = records.front();

    std::unordered_map<std::string, std::size_t> header_index;
    for (std::size_t i = 0; i < header.size(); ++i) header_index.emplace(std::string(trim(header[i])), i);
    auto locate = [&](const std::string& name) {
        auto it = header_index.find(name);
        if (it == header_index.end()) throw SchemaError("missing column '" + name + "'");
        return it->second;
    };
    std::vector<std::size_t> feature_src;
    for (const auto& name : schema.feature_names) feature_src.push_back(locate(name));
    const std::size_t label_src = locate(schema.label_column);

    const std::unordered_set<std::string> categorical_set(schema.categorical_columns.begin(),
                                                          schema.categorical_columns.end());
    std::unordered_map<std::string, int> class_code;
    for (std::size_t c = 0; c < schema.class_names.size(); ++c) class_code.emplace(schema.class_names[c], int(c));

    FeatureMatrix m;
    m.feature_names = schema.feature_names;
    m.class_names = schema.class_names;
    for (const auto& name : m.feature_names) m.categorical.push_back(categorical_set.count(name) > 0);
    const std::size_t n_cols = m.n_cols();
    const std::size_t n_data = records.size() - 1;
    if (n_data == 0) throw DataError("CSV has a header but no data rows");
    m.n_rows = n_data;
    m.values.assign(n_data * n_cols, 0.0);
    m.labels.assign(n_data, 0);

    std::vector<std::unordered_map<std::string, int>> codes(n_cols);
    std::vector<std::vector<std::size_t>> missing(n_cols);

    for (std::size_t r = 0; r < n_data; ++r) {
        const CsvRecord& rec = records[r + 1];
        if (rec.size() != header.size())
            throw ParseError("row " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) +
                                 " fields, header has " + std::to_string(header.size()),
                             r + 1, 0);
        for (std::size_t c = 0; c < n_cols; ++c) {
            const std::string& cell = rec[feature_src[c]];
            if (m.categorical[c]) {
                const std::string key(trim(cell));
                auto [it, inserted] = codes[c].emplace(key, int(codes[c].size()));
                if (inserted) m.encoder_map[m.feature_names[c]].push_back(key);
                m.at(r, c) = it->second;
                continue;
            }
            if (trim(cell).empty()) {
                if (!options.allow_missing)
                    throw ParseError("row " + std::to_string(r + 1) + ", column '" + m.feature_names[c] +
                                         "': empty cell",
                                     r + 1, c + 1);
                missing[c].push_back(r);
                continue;
            }
            auto v = parse_double(cell);
            if (!v)
                throw ParseError("row " + std::to_string(r + 1) + ", column '" + m.feature_names[c] +
                                     "': cannot parse '" + cell + "' as a number",
                                 r + 1, c + 1);
            m.at(r, c) = *v;
        }
        const std::string label(trim(rec[label_src]));
        auto it = class_code.find(label);
        if (it == class_code.end())
            throw ParseError("row " + std::to_string(r + 1) + ": label '" + label + "' is not a configured class",
                             r + 1, label_src + 1);
        m.labels[r] = it->second;
    }

    std::size_t filled = 0;
    for (std::size_t c = 0; c < n_cols; ++c) {
        if (missing[c].empty()) continue;
        const std::size_t present = n_data - missing[c].size();
        if (present == 0) throw DataError("column '" + m.feature_names[c] + "' has no values");
        std::vector<bool> is_missing(n_data, false);
        for (std::size_t r : missing[c]) is_missing[r] = true;
        double sum = 0.0;
        for (std::size_t r = 0; r < n_data; ++r)
            if (!is_missing[r]) sum += m.at(r, c);
        const double mean = sum / double(present);
        for (std::size_t r : missing[c]) m.at(r, c) = mean;
        filled += missing[c].size();
    }
    if (filled > 0) std::clog << "xtree: filled " << filled << " empty cells with column means\n";

    m.validate();
    return m;
}

inline FeatureMatrix load_csv(const std::filesystem::path& path, const DatasetSchema& schema,
                              const LoadOptions& options = {}) {
    if (!std::filesystem::exists(path)) throw DataError("dataset file '" + path.string() + "' does not exist");
    return parse_csv(read_file(path), schema, options);
}

/// Writes the matrix as a CSV with class names in `label_column`; categorical
/// columns are written back as their category strings.
inline std::string to_csv_text(const FeatureMatrix& m, const std::string& label_column) {
    std::string out;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        out += csv_escape(m.feature_names[c]);
        out += ',';
    }
    out += csv_escape(label_column);
    out += '\n';
    for (std::size_t r = 0; r < m.n_rows; ++r) {
        for (std::size_t c = 0; c < m.n_cols(); ++c) {
            auto it = m.encoder_map.find(m.feature_names[c]);
            if (m.categorical[c] && it != m.encoder_map.end())
                out += csv_escape(it->second.at(static_cast<std::size_t>(m.at(r, c))));
            else
                out += format_double(m.at(r, c));
            out += ',';
        }
        out += csv_escape(m.class_names[static_cast<std::size_t>(m.labels[r])]);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// deduplicate

struct DedupResult {
    FeatureMatrix matrix;
    std::size_t removed = 0;
};

/// Drops rows whose feature bits and label repeat an earlier row.
inline DedupResult deduplicate(const FeatureMatrix& m) {
    std::unordered_set<std::string> seen;
    seen.reserve(m.n_rows);
    std::vector<std::size_t> keep;
    keep.reserve(m.n_rows);
    std::string key(m.n_cols() * sizeof(double) + sizeof(int), '\0');
    for (std::size_t r = 0; r < m.n_rows; ++r) {
        const auto row = m.row(r);
        std::memcpy(key.data(), row.data(), row.size_bytes());
        std::memcpy(key.data() + row.size_bytes(), &m.labels[r], sizeof(int));
        if (seen.insert(key).second) keep.push_back(r);
    }
    return {take_rows(m, keep), m.n_rows - keep.size()};
}

// ---------------------------------------------------------------------------
// stratified split and folds

struct SplitPair {
    FeatureMatrix train;
    FeatureMatrix test;
    std::vector<std::size_t> train_rows;  // indices into the input
    std::vector<std::size_t> test_rows;
    std::uint64_t seed = 0;
    double ratio = 0.0;
};

inline std::vector<std::vector<std::size_t>> rows_by_class(std::span<const int> labels, std::size_t n_classes) {
    std::vector<std::vector<std::size_t>> out(n_classes);
    for (std::size_t r = 0; r < labels.size(); ++r) out[static_cast<std::size_t>(labels[r])].push_back(r);
    return out;
}

/// Train size for a class of `count` rows: round(ratio * count).
inline std::size_t stratified_train_size(std::size_t count, double ratio) {
    return static_cast<std::size_t>(std::llround(ratio * double(count)));
}

/// Per-class seeded shuffle, then a per-class cut at round(ratio * count).
/// Classes with no rows are ignored; a class with a single row is an error.
inline SplitPair stratified_split(const FeatureMatrix& m, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie strictly between 0 and 1");
    auto groups = rows_by_class(m.labels, m.n_classes());
    SplitPair out;
    out.seed = seed;
    out.ratio = ratio;
    for (std::size_t c = 0; c < groups.size(); ++c) {
        auto& rows = groups[c];
        if (rows.empty()) continue;
        if (rows.size() < 2)
            throw DataError("class '" + m.class_names[c] + "' has fewer than 2 rows; cannot split");
        Rng rng(derive_seed(seed, "split/class/" + std::to_string(c)));
        rng.shuffle(rows);
        const std::size_t n_train = stratified_train_size(rows.size(), ratio);
        out.train_rows.insert(out.train_rows.end(), rows.begin(), rows.begin() + std::ptrdiff_t(n_train));
        out.test_rows.insert(out.test_rows.end(), rows.begin() + std::ptrdiff_t(n_train), rows.end());
    }
    std::sort(out.train_rows.begin(), out.train_rows.end());
    std::sort(out.test_rows.begin(), out.test_rows.end());
    out.train = take_rows(m, out.train_rows);
    out.test = take_rows(m, out.test_rows);
    return out;
}

/// Fold id in [0, k) for each row. Rows of each class are shuffled and dealt
/// round-robin, continuing the deal across classes, so fold sizes differ by
/// at most one overall and per class.
inline std::vector<int> stratified_folds(std::span<const int> labels, std::size_t n_classes, std::size_t k,
                                         std::uint64_t seed) {
    if (k < 2) throw ConfigError("k-fold needs k >= 2");
    auto groups = rows_by_class(labels, n_classes);
    std::vector<int> fold(labels.size(), -1);
    std::size_t dealt = 0;
    for (std::size_t c = 0; c < groups.size(); ++c) {
        auto& rows = groups[c];
        if (rows.empty()) continue;
        if (rows.size() < k)
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                            " rows, fewer than k = " + std::to_string(k));
        Rng rng(derive_seed(seed, "folds/class/" + std::to_string(c)));
        rng.shuffle(rows);
        for (std::size_t r : rows) fold[r] = static_cast<int>(dealt++ % k);
    }
    return fold;
}

// ---------------------------------------------------------------------------
// snapshot: <base>.json (metadata) + <base>.csv (values and label codes)

inline constexpr int kSnapshotVersion = 1;

inline void save_snapshot(const FeatureMatrix& m, const std::filesystem::path& base) {
    json meta;
    meta["format"] = "xtree-matrix";
    meta["version"] = kSnapshotVersion;
    meta["n_rows"] = m.n_rows;
    meta["feature_names"] = m.feature_names;
    std::vector<std::string> categorical;
    for (std::size_t c = 0; c < m.n_cols(); ++c)
        if (m.categorical[c]) categorical.push_back(m.feature_names[c]);
    meta["categorical_columns"] = categorical;
    meta["class_names"] = m.class_names;
    json enc = json::object();
    for (const auto& [name, cats] : m.encoder_map) enc[name] = cats;
    meta["encoder_map"] = enc;

    std::string csv;
    for (const auto& name : m.feature_names) {
        csv += csv_escape(name);
        csv += ',';
    }
    csv += "__label__\n";
    for (std::size_t r = 0; r < m.n_rows; ++r) {
        for (std::size_t c = 0; c < m.n_cols(); ++c) {
            csv += format_double(m.at(r, c));
            csv += ',';
        }
        csv += std::to_string(m.labels[r]);
        csv += '\n';
    }
    write_file(std::filesystem::path(base.string() + ".json"), meta.dump(2) + "\n");
    write_file(std::filesystem::path(base.string() + ".csv"), csv);
}

inline FeatureMatrix load_snapshot(const std::filesystem::path& base) {
    const std::filesystem::path meta_path(base.string() + ".json");
    const std::filesystem::path csv_path(base.string() + ".csv");
    if (!std::filesystem::exists(meta_path) || !std::filesystem::exists(csv_path))
        throw DataError("snapshot '" + base.string() + "' not found");
    json meta;
    try {
        meta = json::parse(read_file(meta_path));
    } catch (const json::exception& e) {
        throw DataError("snapshot metadata '" + meta_path.string() + "': " + e.what());
    }
    if (meta.value("format", "") != "xtree-matrix" || meta.value("version", 0) != kSnapshotVersion)
        throw DataError("'" + meta_path.string() + "' is not a version " + std::to_string(kSnapshotVersion) +
                        " matrix snapshot");
    FeatureMatrix m;
    m.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
    m.class_names = meta.at("class_names").get<std::vector<std::string>>();
    const auto cats = meta.at("categorical_columns").get<std::vector<std::string>>();
    for (const auto& name : m.feature_names)
        m.categorical.push_back(std::find(cats.begin(), cats.end(), name) != cats.end());
    for (const auto& [name, v] : meta.at("encoder_map").items())
        m.encoder_map[name] = v.get<std::vector<std::string>>();

    const auto records = parse_csv_text(read_file(csv_path));
    if (records.empty()) throw DataError("snapshot values '" + csv_path.string() + "' are empty");
    const std::size_t width = m.n_cols() + 1;
    if (records.front().size() != width) throw DataError("snapshot header does not match metadata");
    m.n_rows = records.size() - 1;
    m.values.reserve(m.n_rows * m.n_cols());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != width)
            throw ParseError("snapshot row " + std::to_string(r) + " has wrong width", r, 0);
        for (std::size_t c = 0; c < m.n_cols(); ++c) {
            auto v = parse_double(records[r][c]);
            if (!v) throw ParseError("snapshot row " + std::to_string(r) + ": bad number", r, c + 1);
            m.values.push_back(*v);
        }
        auto y = parse_double(records[r].back());
        if (!y) throw ParseError("snapshot row " + std::to_string(r) + ": bad label", r, width);
        m.labels.push_back(static_cast<int>(*y));
    }
    if (meta.at("n_rows").get<std::size_t>() != m.n_rows) throw DataError("snapshot row count mismatch");
    m.validate();
    return m;
}

}  // namespace xtree
