#include "mmpc/signals.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mmpc/error.hpp"

namespace mmpc {

namespace {

std::vector<std::string> default_names(char prefix, Eigen::Index count) {
    std::vector<std::string> names;
    for (Eigen::Index i = 0; i < count; ++i) {
        names.push_back(std::string(1, prefix) + std::to_string(i + 1));
    }
    return names;
}

std::uint32_t register_mask(int n) { return n >= 32 ? 0xFFFFFFFFu : ((1u << n) - 1u); }

void check_register(int n, const std::vector<int>& taps, std::uint32_t seed) {
    if (n < 2 || n > 24) {
        throw ConfigError("PRBS register length must be in 2..24, got " + std::to_string(n));
    }
    if (taps.empty()) {
        throw ConfigError("PRBS taps are empty");
    }
    for (int t : taps) {
        if (t < 1 || t > n) {
            throw ConfigError("PRBS tap " + std::to_string(t) + " outside 1.." + std::to_string(n));
        }
    }
    if ((seed & register_mask(n)) == 0) {
        throw ConfigError("PRBS seed must be a nonzero register state");
    }
}

// Fibonacci LFSR: the output is bit 0, feedback enters at bit n-1.
class Lfsr {
public:
    Lfsr(int n, const std::vector<int>& taps, std::uint32_t seed) : n_(n), state_(seed & register_mask(n)) {
        for (int t : taps) {
            tap_mask_ |= 1u << (n - t);
        }
    }

    std::uint8_t next() {
        const std::uint8_t out = state_ & 1u;
        const auto feedback = static_cast<std::uint32_t>(__builtin_parity(state_ & tap_mask_));
        state_ = (state_ >> 1) | (feedback << (n_ - 1));
        return out;
    }

    [[nodiscard]] std::uint32_t state() const noexcept { return state_; }

private:
    int n_;
    std::uint32_t state_;
    std::uint32_t tap_mask_ = 0;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
        fields.push_back(trim(field));
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

bool parse_double(const std::string& text, double& value) {
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (first != last && *first == '+') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, last, value);
    return ec == std::errc() && ptr == last && first != last;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace

Dataset::Dataset(Eigen::MatrixXd u, Eigen::MatrixXd y, double ts, std::vector<std::string> input_names,
                 std::vector<std::string> output_names)
    : u_(std::move(u)), y_(std::move(y)), ts_(ts), input_names_(std::move(input_names)),
      output_names_(std::move(output_names)) {
    if (u_.rows() != y_.rows()) {
        throw DimensionError("dataset: u has " + std::to_string(u_.rows()) + " rows but y has " +
                             std::to_string(y_.rows()));
    }
    if (u_.rows() < 1) {
        throw DimensionError("dataset: at least one sample is required");
    }
    if (!(ts_ > 0.0) || !std::isfinite(ts_)) {
        throw ConfigError("dataset: sampling interval must be positive");
    }
    if (input_names_.empty()) {
        input_names_ = default_names('u', u_.cols());
    }
    if (output_names_.empty()) {
        output_names_ = default_names('y', y_.cols());
    }
    if (static_cast<Eigen::Index>(input_names_.size()) != u_.cols() ||
        static_cast<Eigen::Index>(output_names_.size()) != y_.cols()) {
        throw DimensionError("dataset: channel name count does not match channel count");
    }
}

Dataset Dataset::slice(Eigen::Index first, Eigen::Index count) const {
    if (first < 0 || count < 1 || first + count > samples()) {
        throw DimensionError("dataset slice out of range");
    }
    return Dataset(u_.middleRows(first, count), y_.middleRows(first, count), ts_, input_names_, output_names_);
}

std::vector<int> primitive_taps(int register_length) {
    switch (register_length) {
        case 2: return {2, 1};
        case 3: return {3, 2};
        case 4: return {4, 3};
        case 5: return {5, 3};
        case 6: return {6, 5};
        case 7: return {7, 6};
        case 8: return {8, 6, 5, 4};
        case 9: return {9, 5};
        case 10: return {10, 7};
        case 11: return {11, 9};
        case 12: return {12, 11, 10, 4};
        case 13: return {13, 12, 11, 8};
        case 14: return {14, 13, 12, 2};
        case 15: return {15, 14};
        case 16: return {16, 15, 13, 4};
        default:
            throw ConfigError("no built-in PRBS taps for register length " + std::to_string(register_length) +
                              " (table covers 2..16)");
    }
}

std::vector<std::uint8_t> lfsr_bits(int register_length, const std::vector<int>& taps, std::uint32_t seed,
                                    std::size_t count) {
    check_register(register_length, taps, seed);
    Lfsr reg(register_length, taps, seed);
    std::vector<std::uint8_t> bits(count);
    for (auto& b : bits) {
        b = reg.next();
    }
    return bits;
}

std::uint64_t lfsr_period(int register_length, const std::vector<int>& taps, std::uint32_t seed) {
    check_register(register_length, taps, seed);
    Lfsr reg(register_length, taps, seed);
    const std::uint32_t start = reg.state();
    const std::uint64_t limit = std::uint64_t{1} << register_length;
    for (std::uint64_t step = 1; step <= limit; ++step) {
        reg.next();
        if (reg.state() == start) {
            return step;
        }
    }
    // The register entered a cycle that does not contain the seed.
    return 0;
}

Eigen::VectorXd prbs_generate(const PrbsSpec& spec) {
    if (!(spec.low < spec.high)) {
        throw ConfigError("PRBS levels must satisfy low < high");
    }
    if (spec.clock_period < 1) {
        throw ConfigError("PRBS clock period must be >= 1");
    }
    if (spec.total_length < 1) {
        throw ConfigError("PRBS total length must be >= 1");
    }
    const std::vector<int> taps = spec.taps.empty() ? primitive_taps(spec.register_length) : spec.taps;
    const std::uint64_t expected = (std::uint64_t{1} << spec.register_length) - 1;
    const std::uint64_t period = lfsr_period(spec.register_length, taps, spec.seed);
    if (period != expected) {
        std::ostringstream msg;
        msg << "PRBS taps {";
        for (std::size_t i = 0; i < taps.size(); ++i) {
            msg << (i ? "," : "") << taps[i];
        }
        msg << "} are not primitive for n=" << spec.register_length << ": measured period " << period
            << ", expected " << expected;
        throw ConfigError(msg.str());
    }

    const std::size_t clock = static_cast<std::size_t>(spec.clock_period);
    const std::size_t n_bits = (spec.total_length + clock - 1) / clock;
    const auto bits = lfsr_bits(spec.register_length, taps, spec.seed, n_bits);
    Eigen::VectorXd out(static_cast<Eigen::Index>(spec.total_length));
    for (std::size_t i = 0; i < spec.total_length; ++i) {
        out(static_cast<Eigen::Index>(i)) = bits[i / clock] ? spec.high : spec.low;
    }
    return out;
}

std::pair<Dataset, Dataset> split(const Dataset& d, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ConfigError("split fraction must lie in (0,1)");
    }
    const auto n = d.samples();
    const auto n_train = static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * fraction));
    if (n_train < 1 || n - n_train < 1) {
        throw ConfigError("split of " + std::to_string(n) + " samples leaves an empty part");
    }
    return {d.slice(0, n_train), d.slice(n_train, n - n_train)};
}

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) {
        throw ParseError(path.string() + ": missing header", 1);
    }
    ++line_no;
    const auto header = split_fields(line);

    long t_col = -1;
    std::vector<long> u_cols, y_cols;
    std::vector<std::string> u_names, y_names;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& name = header[c];
        double dummy = 0.0;
        if (name.empty() || parse_double(name, dummy)) {
            throw ParseError(path.string() + ": line 1: missing header", 1);
        }
        if (name == "t") {
            t_col = static_cast<long>(c);
        } else if (name[0] == 'u') {
            u_cols.push_back(static_cast<long>(c));
            u_names.push_back(name);
        } else if (name[0] == 'y') {
            y_cols.push_back(static_cast<long>(c));
            y_names.push_back(name);
        } else {
            throw ParseError(path.string() + ": line 1: unrecognised column '" + name + "'", 1);
        }
    }
    if (t_col < 0) {
        throw ParseError(path.string() + ": line 1: header lacks a 't' column", 1);
    }

    std::vector<double> t;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_fields(line);
        const long row = static_cast<long>(rows.size()) + 1;
        if (fields.size() != header.size()) {
            throw ParseError(path.string() + ": line " + std::to_string(line_no) + " (row " + std::to_string(row) +
                                 "): expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             line_no);
        }
        std::vector<double> values(fields.size());
        for (std::size_t c = 0; c < fields.size(); ++c) {
            if (!parse_double(fields[c], values[c])) {
                throw ParseError(path.string() + ": line " + std::to_string(line_no) + " (row " +
                                     std::to_string(row) + "): bad number '" + fields[c] + "'",
                                 line_no);
            }
        }
        t.push_back(values[static_cast<std::size_t>(t_col)]);
        if (t.size() >= 3) {
            const double ts = t[1] - t[0];
            const double step = t[t.size() - 1] - t[t.size() - 2];
            if (std::abs(step - ts) > 1e-9 * std::abs(ts)) {
                throw ParseError(path.string() + ": line " + std::to_string(line_no) + " (row " +
                                     std::to_string(row) + "): non-uniform t spacing",
                                 line_no);
            }
        }
        rows.push_back(std::move(values));
    }
    if (rows.size() < 2) {
        throw ParseError(path.string() + ": at least two rows are needed to infer the sampling interval", line_no);
    }
    const double ts = t[1] - t[0];
    if (!(ts > 0.0)) {
        throw ParseError(path.string() + ": line 3 (row 2): t must be increasing", 3);
    }

    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd u(n, static_cast<Eigen::Index>(u_cols.size()));
    Eigen::MatrixXd y(n, static_cast<Eigen::Index>(y_cols.size()));
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& values = rows[static_cast<std::size_t>(r)];
        for (std::size_t c = 0; c < u_cols.size(); ++c) {
            u(r, static_cast<Eigen::Index>(c)) = values[static_cast<std::size_t>(u_cols[c])];
        }
        for (std::size_t c = 0; c < y_cols.size(); ++c) {
            y(r, static_cast<Eigen::Index>(c)) = values[static_cast<std::size_t>(y_cols[c])];
        }
    }
    return Dataset(std::move(u), std::move(y), ts, std::move(u_names), std::move(y_names));
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "t";
    for (const auto& name : d.input_names()) {
        out << ',' << (name.starts_with('u') ? name : "u" + name);
    }
    for (const auto& name : d.output_names()) {
        out << ',' << (name.starts_with('y') ? name : "y" + name);
    }
    out << '\n';
    for (Eigen::Index r = 0; r < d.samples(); ++r) {
        out << format_double(static_cast<double>(r) * d.ts());
        for (Eigen::Index c = 0; c < d.inputs(); ++c) {
            out << ',' << format_double(d.u()(r, c));
        }
        for (Eigen::Index c = 0; c < d.outputs(); ++c) {
            out << ',' << format_double(d.y()(r, c));
        }
        out << '\n';
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

} // namespace mmpc
