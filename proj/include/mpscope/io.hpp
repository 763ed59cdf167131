#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpscope/errors.hpp"
#include "mpscope/matrix.hpp"

namespace mpscope {

enum class Dtype { f32, f64 };

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

inline Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::f32;
    if (s == "f64") return Dtype::f64;
    throw io_error("unknown dtype '" + s + "'");
}

inline std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

struct TensorEntry {
    std::string name;
    Dtype dtype = Dtype::f64;
    std::vector<std::size_t> shape;
    std::vector<double> values;  // f32 entries are pre-quantized (see add)

    std::size_t count() const {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return n;
    }
};

// Ordered collection of named tensors. Values live as doubles in memory; f32
// tensors are rounded through float at insertion so that what we hold equals
// what a file round trip returns, bit for bit.
class TensorStore {
   public:
    void add(const std::string& name, Dtype dtype, std::vector<std::size_t> shape,
             std::vector<double> values) {
        if (index_.count(name)) {
            throw config_error("tensor store: duplicate tensor '" + name + "'");
        }
        TensorEntry e;
        e.name = name;
        e.dtype = dtype;
        e.shape = std::move(shape);
        std::size_t n = 1;
        for (auto s : e.shape) {
            if (s == 0) throw config_error("tensor store: zero dimension in '" + name + "'");
            n *= s;
        }
        if (n != values.size()) {
            throw config_error("tensor store: '" + name + "' shape holds " +
                               std::to_string(n) + " values, got " +
                               std::to_string(values.size()));
        }
        if (dtype == Dtype::f32) {
            for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
        }
        e.values = std::move(values);
        index_[name] = entries_.size();
        entries_.push_back(std::move(e));
    }

    void add_matrix(const std::string& name, const Matrix& m, Dtype dtype) {
        add(name, dtype, {m.rows, m.cols}, m.data);
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const TensorEntry& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw config_error("tensor store: missing tensor '" + name + "'");
        }
        return entries_[it->second];
    }

    // Fetches a rank-2 tensor as a Matrix, checking the expected shape.
    Matrix get_matrix(const std::string& name, std::size_t rows,
                      std::size_t cols) const {
        const TensorEntry& e = get(name);
        if (e.shape.size() != 2 || e.shape[0] != rows || e.shape[1] != cols) {
            std::string actual;
            for (std::size_t i = 0; i < e.shape.size(); ++i) {
                if (i) actual += "x";
                actual += std::to_string(e.shape[i]);
            }
            throw config_error("tensor '" + name + "': expected shape " +
                               std::to_string(rows) + "x" + std::to_string(cols) +
                               ", found " + actual);
        }
        Matrix m(rows, cols);
        m.data = e.values;
        return m;
    }

    const std::vector<TensorEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

   private:
    std::vector<TensorEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

namespace detail {

constexpr char kTensorMagic[8] = {'N', 'T', 'E', 'N', 'S', 'O', 'R', '1'};

inline std::size_t align64(std::size_t n) { return (n + 63) & ~std::size_t{63}; }

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

// Little-endian scalar writes. The build targets little-endian hosts; the
// static_assert below trips elsewhere rather than silently writing a
// byte-swapped file.
static_assert(std::endian::native == std::endian::little,
              "tensor file writer assumes a little-endian host");

inline void append_f32_le(std::string& out, float v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

inline void append_f64_le(std::string& out, double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}

}  // namespace detail

// File layout: magic "NTENSOR1", u64 little-endian header byte length, UTF-8
// JSON header listing {name, dtype, shape, offset} per tensor, zero padding
// to a 64-byte boundary, then raw little-endian payloads. Offsets are
// relative to the payload base and each is 64-byte aligned.
inline void write_tensors(const TensorStore& store, const std::string& path) {
    if (store.size() == 0) {
        throw config_error("tensor store: nothing to write");
    }
    nlohmann::ordered_json header;
    header["tensors"] = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    for (const auto& e : store.entries()) {
        nlohmann::ordered_json t;
        t["name"] = e.name;
        t["dtype"] = dtype_name(e.dtype);
        t["shape"] = e.shape;
        t["offset"] = offset;
        header["tensors"].push_back(std::move(t));
        offset = detail::align64(offset + e.count() * dtype_size(e.dtype));
    }
    const std::string header_json = header.dump();

    std::string out;
    out.append(detail::kTensorMagic, 8);
    detail::put_u64_le(out, header_json.size());
    out += header_json;
    const std::size_t payload_base = detail::align64(out.size());
    out.resize(payload_base, '\0');
    for (const auto& e : store.entries()) {
        for (double v : e.values) {
            if (e.dtype == Dtype::f32) {
                detail::append_f32_le(out, static_cast<float>(v));
            } else {
                detail::append_f64_le(out, v);
            }
        }
        out.resize(detail::align64(out.size()), '\0');
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) throw io_error("write failed for '" + path + "'");
}

inline TensorStore read_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());

    if (bytes.size() < 16 || std::memcmp(bytes.data(), detail::kTensorMagic, 8) != 0) {
        throw io_error("'" + path + "' is not a tensor file (bad magic)");
    }
    const std::uint64_t header_len = detail::get_u64_le(
        reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
    if (16 + header_len > bytes.size()) {
        throw io_error("'" + path + "' truncated inside header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw io_error("'" + path + "' header is not valid JSON: " + e.what());
    }
    if (!header.contains("tensors") || !header["tensors"].is_array()) {
        throw io_error("'" + path + "' header lacks a tensors array");
    }

    const std::size_t payload_base = detail::align64(16 + header_len);

    TensorStore store;
    try {
        // The writer pads every tensor (the last one included) to a 64-byte
        // boundary, so the total size is determined by the header. Enforcing
        // it exactly catches torn writes even when only trailing padding is
        // lost, and trailing garbage as well.
        std::size_t expected = payload_base;
        for (const auto& t : header["tensors"]) {
            std::size_t n = 1;
            for (auto s : t.at("shape").get<std::vector<std::size_t>>()) n *= s;
            expected = detail::align64(
                expected + n * dtype_size(dtype_from_name(
                                   t.at("dtype").get<std::string>())));
        }
        if (bytes.size() != expected) {
            throw io_error("'" + path + "' holds " + std::to_string(bytes.size()) +
                           " bytes, expected " + std::to_string(expected));
        }

        std::set<std::string> seen;
        for (const auto& t : header["tensors"]) {
            const std::string name = t.at("name").get<std::string>();
            if (!seen.insert(name).second) {
                throw io_error("'" + path + "' declares tensor '" + name + "' twice");
            }
            const Dtype dtype = dtype_from_name(t.at("dtype").get<std::string>());
            const auto shape = t.at("shape").get<std::vector<std::size_t>>();
            const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
            if (offset % 64 != 0) {
                throw io_error("'" + path + "': tensor '" + name + "' offset " +
                               std::to_string(offset) + " is not 64-byte aligned");
            }
            std::size_t n = 1;
            for (auto s : shape) n *= s;
            const std::size_t begin = payload_base + offset;
            const std::size_t nbytes = n * dtype_size(dtype);
            if (begin + nbytes > bytes.size()) {
                throw io_error("'" + path + "' truncated: tensor '" + name +
                               "' needs " + std::to_string(nbytes) +
                               " bytes at payload offset " + std::to_string(offset));
            }
            std::vector<double> values(n);
            const char* p = bytes.data() + begin;
            if (dtype == Dtype::f32) {
                for (std::size_t i = 0; i < n; ++i) {
                    float v;
                    std::memcpy(&v, p + 4 * i, 4);
                    values[i] = static_cast<double>(v);
                }
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    std::memcpy(&values[i], p + 8 * i, 8);
                }
            }
            store.add(name, dtype, shape, std::move(values));
        }
    } catch (const nlohmann::json::exception& e) {
        throw io_error("'" + path + "' header malformed: " + e.what());
    } catch (const config_error& e) {
        // Inconsistencies surfaced by the store (zero dims, duplicate names
        // reaching add) mean the file itself is bad.
        throw io_error("'" + path + "': " + e.what());
    }
    return store;
}

// ---------------------------------------------------------------------------
// Metrics tables

struct MetricsRow {
    long long step = 0;
    long long layer = 0;
    std::string variant;
    std::size_t m = 0;
    std::size_t d_in = 0;
    double gamma = 0.0;
    double lambda1 = 0.0;
    double mp_gap = 0.0;
    long long outlier_count = 0;
    double outlier_energy = 0.0;
    double mp_soft_rank = 0.0;
    double stable_rank = 0.0;
    std::optional<double> attention_entropy_bits;
};

inline const char* kMetricsHeader =
    "step,layer,variant,m,d_in,gamma,lambda1,mp_gap,outlier_count,"
    "outlier_energy,mp_soft_rank,stable_rank,attention_entropy_bits";

// 17 significant digits: enough for an exact double round trip.
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string metrics_row_csv(const MetricsRow& r) {
    std::string line;
    line += std::to_string(r.step);
    line += ',';
    line += std::to_string(r.layer);
    line += ',';
    line += r.variant;
    line += ',';
    line += std::to_string(r.m);
    line += ',';
    line += std::to_string(r.d_in);
    line += ',';
    line += format_double(r.gamma);
    line += ',';
    line += format_double(r.lambda1);
    line += ',';
    line += format_double(r.mp_gap);
    line += ',';
    line += std::to_string(r.outlier_count);
    line += ',';
    line += format_double(r.outlier_energy);
    line += ',';
    line += format_double(r.mp_soft_rank);
    line += ',';
    line += format_double(r.stable_rank);
    line += ',';
    if (r.attention_entropy_bits) line += format_double(*r.attention_entropy_bits);
    return line;
}

// Appends one row, writing the header first when the file is new or empty.
// Each append flushes so an interrupted run leaves a parseable prefix.
inline void append_metrics_row(const std::string& path, const MetricsRow& row) {
    bool need_header = true;
    {
        std::ifstream probe(path, std::ios::binary);
        if (probe && probe.peek() != std::ifstream::traits_type::eof()) {
            need_header = false;
        }
    }
    std::ofstream f(path, std::ios::app);
    if (!f) throw io_error("cannot open '" + path + "' for append");
    if (need_header) f << kMetricsHeader << '\n';
    f << metrics_row_csv(row) << '\n';
    f.flush();
    if (!f) throw io_error("write failed for '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double_field(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw io_error("bad numeric field '" + s + "' for " + what);
    }
}

inline long long parse_int_field(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw io_error("bad integer field '" + s + "' for " + what);
    }
}

}  // namespace detail

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(f, line)) throw io_error("'" + path + "' is empty");
    if (line != kMetricsHeader) {
        throw io_error("'" + path + "' has an unexpected header: " + line);
    }
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 13) {
            throw io_error("'" + path + "' line " + std::to_string(lineno) +
                           ": expected 13 fields, found " +
                           std::to_string(fields.size()));
        }
        MetricsRow r;
        const std::string where = path + ":" + std::to_string(lineno);
        r.step = detail::parse_int_field(fields[0], where + " step");
        r.layer = detail::parse_int_field(fields[1], where + " layer");
        r.variant = fields[2];
        r.m = static_cast<std::size_t>(detail::parse_int_field(fields[3], where + " m"));
        r.d_in = static_cast<std::size_t>(
            detail::parse_int_field(fields[4], where + " d_in"));
        r.gamma = detail::parse_double_field(fields[5], where + " gamma");
        r.lambda1 = detail::parse_double_field(fields[6], where + " lambda1");
        r.mp_gap = detail::parse_double_field(fields[7], where + " mp_gap");
        r.outlier_count = detail::parse_int_field(fields[8], where + " outlier_count");
        r.outlier_energy =
            detail::parse_double_field(fields[9], where + " outlier_energy");
        r.mp_soft_rank =
            detail::parse_double_field(fields[10], where + " mp_soft_rank");
        r.stable_rank = detail::parse_double_field(fields[11], where + " stable_rank");
        if (!fields[12].empty()) {
            r.attention_entropy_bits =
                detail::parse_double_field(fields[12], where + " attention_entropy_bits");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

// Metric accessor by column name; entropy is optional and reported via the
// bool return.
inline bool metric_value(const MetricsRow& r, const std::string& metric,
                         double& out) {
    if (metric == "gamma") out = r.gamma;
    else if (metric == "lambda1") out = r.lambda1;
    else if (metric == "mp_gap") out = r.mp_gap;
    else if (metric == "outlier_count") out = static_cast<double>(r.outlier_count);
    else if (metric == "outlier_energy") out = r.outlier_energy;
    else if (metric == "mp_soft_rank") out = r.mp_soft_rank;
    else if (metric == "stable_rank") out = r.stable_rank;
    else if (metric == "attention_entropy_bits") {
        if (!r.attention_entropy_bits) return false;
        out = *r.attention_entropy_bits;
    } else {
        throw config_error("unknown metric '" + metric + "'");
    }
    return true;
}

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {
        "gamma",          "lambda1",      "mp_gap",
        "outlier_count",  "outlier_energy", "mp_soft_rank",
        "stable_rank",    "attention_entropy_bits"};
    return names;
}

// Grid CSV: rows = layers ascending, columns = steps ascending, cells = the
// chosen metric. Cells with no matching row stay empty; no interpolation.
inline void export_heatmap(const std::vector<MetricsRow>& rows,
                           const std::string& metric, const std::string& path) {
    if (rows.empty()) throw config_error("heatmap: no metrics rows");
    // Validates the metric name even if every cell turns out empty.
    {
        double probe;
        metric_value(rows.front(), metric, probe);
    }
    std::set<long long> layer_set, step_set;
    for (const auto& r : rows) {
        layer_set.insert(r.layer);
        step_set.insert(r.step);
    }
    std::map<std::pair<long long, long long>, double> cells;
    for (const auto& r : rows) {
        double v;
        if (metric_value(r, metric, v)) cells[{r.layer, r.step}] = v;
    }

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw io_error("cannot open '" + path + "' for writing");
    f << "layer";
    for (long long s : step_set) f << ",step_" << s;
    f << '\n';
    for (long long l : layer_set) {
        f << l;
        for (long long s : step_set) {
            f << ',';
            auto it = cells.find({l, s});
            if (it != cells.end()) f << format_double(it->second);
        }
        f << '\n';
    }
    f.flush();
    if (!f) throw io_error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Checkpoint tensor naming

inline std::string tensor_name(std::size_t layer, const std::string& leaf) {
    return "layers." + std::to_string(layer) + ".attn." + leaf;
}

}  // namespace mpscope
