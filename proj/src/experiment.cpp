#include "mmpc/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"
#include "mmpc/error.hpp"

namespace mmpc {

namespace fs = std::filesystem;
using boost::property_tree::ptree;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string fmt_vec(const Eigen::VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        s += (i ? " " : "") + fmt(v(i));
    }
    return s;
}

std::string fmt_mat(const Eigen::MatrixXd& M) {
    std::string s;
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        s += (r ? "; " : "") + fmt_vec(M.row(r).transpose());
    }
    return s;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) {
        return "";
    }
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        out.push_back(trim(cur));
    }
    return out;
}

double parse_double(const std::string& text, const std::string& where) {
    const std::string t = trim(text);
    if (t == "inf" || t == "+inf") {
        return kInf;
    }
    if (t == "-inf") {
        return -kInf;
    }
    double v = 0.0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
        throw ConfigError(where + ": '" + text + "' is not a number");
    }
    return v;
}

Eigen::VectorXd parse_vector(const std::string& text, const std::string& where) {
    std::string normalized = text;
    std::replace(normalized.begin(), normalized.end(), ',', ' ');
    std::istringstream is(normalized);
    std::vector<double> vals;
    std::string tok;
    while (is >> tok) {
        vals.push_back(parse_double(tok, where));
    }
    return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

Eigen::MatrixXd parse_matrix(const std::string& text, const std::string& where) {
    std::vector<Eigen::VectorXd> rows;
    for (const auto& r : split_on(text, ';')) {
        if (!r.empty()) {
            rows.push_back(parse_vector(r, where));
        }
    }
    if (rows.empty()) {
        return Eigen::MatrixXd(0, 0);
    }
    Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != M.cols()) {
            throw ConfigError(where + ": matrix rows have different lengths");
        }
        M.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    return M;
}

// "t: v1 v2; t: v1 v2"
std::vector<ScheduleEntry> parse_schedule(const std::string& text, Eigen::Index width, const std::string& where) {
    std::vector<ScheduleEntry> out;
    for (const auto& item : split_on(text, ';')) {
        if (item.empty()) {
            continue;
        }
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ConfigError(where + ": entry '" + item + "' needs the form 'time: values'");
        }
        ScheduleEntry e;
        e.t = parse_double(item.substr(0, colon), where);
        e.value = parse_vector(item.substr(colon + 1), where);
        if (e.value.size() != width) {
            throw ConfigError(where + ": entry at t=" + fmt(e.t) + " has " + std::to_string(e.value.size()) +
                              " values, expected " + std::to_string(width));
        }
        if (!out.empty() && !(e.t > out.back().t)) {
            throw ConfigError(where + ": times must be strictly increasing");
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::string fmt_schedule(const std::vector<ScheduleEntry>& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? "; " : "") + fmt(s[i].t) + ": " + fmt_vec(s[i].value);
    }
    return out;
}

bool parse_bool(const std::string& text, const std::string& where) {
    const std::string t = trim(text);
    if (t == "true" || t == "yes" || t == "1" || t == "on") {
        return true;
    }
    if (t == "false" || t == "no" || t == "0" || t == "off") {
        return false;
    }
    throw ConfigError(where + ": '" + text + "' is not a boolean");
}

int parse_int(const std::string& text, const std::string& where) {
    const double v = parse_double(text, where);
    if (v != std::floor(v) || std::abs(v) > 1e9) {
        throw ConfigError(where + ": '" + text + "' is not an integer");
    }
    return static_cast<int>(v);
}

// One INI section with key bookkeeping.
class Section {
public:
    Section(std::string name, const ptree* node) : name_(std::move(name)), node_(node) {}

    [[nodiscard]] bool present() const { return node_ != nullptr; }

    [[nodiscard]] std::optional<std::string> raw(const std::string& key) {
        used_.insert(key);
        if (!node_) {
            return std::nullopt;
        }
        const auto it = node_->find(key);
        if (it == node_->not_found()) {
            return std::nullopt;
        }
        return trim(it->second.data());
    }

    std::string str(const std::string& key, const std::string& def) { return raw(key).value_or(def); }
    double num(const std::string& key, double def) {
        const auto v = raw(key);
        return v ? parse_double(*v, where(key)) : def;
    }
    int integer(const std::string& key, int def) {
        const auto v = raw(key);
        return v ? parse_int(*v, where(key)) : def;
    }
    bool flag(const std::string& key, bool def) {
        const auto v = raw(key);
        return v ? parse_bool(*v, where(key)) : def;
    }
    Eigen::VectorXd vec(const std::string& key, const Eigen::VectorXd& def, Eigen::Index expected = -1) {
        const auto v = raw(key);
        if (!v) {
            return def;
        }
        Eigen::VectorXd out = parse_vector(*v, where(key));
        if (expected >= 0 && out.size() == 1 && expected > 1) {
            out = Eigen::VectorXd::Constant(expected, out(0));
        }
        if (expected >= 0 && out.size() != expected) {
            throw ConfigError(where(key) + ": expected " + std::to_string(expected) + " values, got " +
                              std::to_string(out.size()));
        }
        return out;
    }
    Eigen::MatrixXd mat(const std::string& key, const Eigen::MatrixXd& def) {
        const auto v = raw(key);
        return v ? parse_matrix(*v, where(key)) : def;
    }

    [[nodiscard]] std::string where(const std::string& key) const { return "[" + name_ + "] " + key; }

    void reject_unknown() const {
        if (!node_) {
            return;
        }
        for (const auto& kv : *node_) {
            if (!used_.count(kv.first)) {
                throw ConfigError("[" + name_ + "]: unknown key '" + kv.first + "'");
            }
        }
    }

private:
    std::string name_;
    const ptree* node_;
    std::set<std::string> used_;
};

const ptree* find_section(const ptree& pt, const std::string& name) {
    const auto it = pt.find(name);
    return it == pt.not_found() ? nullptr : &it->second;
}

// Section headers as written; the INI reader drops sections that have no keys.
std::set<std::string> section_headers(const std::string& text) {
    std::set<std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.size() > 2 && t.front() == '[' && t.back() == ']') {
            out.insert(trim(t.substr(1, t.size() - 2)));
        }
    }
    return out;
}

void require_section(const ptree& pt, const std::set<std::string>& headers, const std::string& name,
                     const fs::path& file) {
    if (!find_section(pt, name) && !headers.count(name)) {
        throw ConfigError(file.string() + ": missing required section [" + name + "]");
    }
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_metadata(const fs::path& dir, const std::string& command) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);
    nlohmann::json meta;
    meta["command"] = command;
    meta["created_utc"] = stamp;
    meta["tool"] = "mmpc";
    write_text(dir / "metadata.json", meta.dump(2) + "\n");
}

std::string model_file(const std::string& id) { return "model_" + id + ".json"; }

std::string channel_metric_name(Eigen::Index i, const char* what) {
    return "y" + std::to_string(i + 1) + "." + what;
}

std::vector<ScheduleEntry> validate_schedule_times(std::vector<ScheduleEntry> s, double duration, const char* what) {
    for (const auto& e : s) {
        if (e.t < 0.0 || e.t > duration) {
            throw ConfigError(std::string("[run] ") + what + ": time " + fmt(e.t) + " lies outside [0, duration]");
        }
    }
    return s;
}

// Piecewise-constant step metrics on one channel for the first setpoint change.
void step_metrics(const Trajectory& tr, Eigen::Index ch, ChannelMetrics& m) {
    m.rise_time = kNaN;
    m.settling_time = kNaN;
    m.overshoot = kNaN;
    const Eigen::Index K = tr.t.size();
    Eigen::Index start = -1;
    for (Eigen::Index k = 1; k < K; ++k) {
        if (tr.r(k, ch) != tr.r(k - 1, ch)) {
            start = k;
            break;
        }
    }
    if (start < 0) {
        return;
    }
    Eigen::Index end = K;
    for (Eigen::Index k = start + 1; k < K; ++k) {
        if (tr.r(k, ch) != tr.r(k - 1, ch)) {
            end = k;
            break;
        }
    }
    const double from = tr.r(start - 1, ch);
    const double to = tr.r(start, ch);
    const double delta = to - from;
    const double sign = delta > 0 ? 1.0 : -1.0;
    const double t0 = tr.t(start);
    double t10 = kNaN;
    double t90 = kNaN;
    double peak = -kInf;
    Eigen::Index last_out = start - 1;
    for (Eigen::Index k = start; k < end; ++k) {
        const double progress = (tr.y(k, ch) - from) / delta;
        if (std::isnan(t10) && progress >= 0.1) {
            t10 = tr.t(k);
        }
        if (std::isnan(t90) && progress >= 0.9) {
            t90 = tr.t(k);
        }
        peak = std::max(peak, sign * (tr.y(k, ch) - to));
        if (std::abs(tr.y(k, ch) - to) > 0.02 * std::abs(delta)) {
            last_out = k;
        }
    }
    if (!std::isnan(t10) && !std::isnan(t90)) {
        m.rise_time = t90 - t10;
    }
    if (last_out + 1 < end) {
        m.settling_time = tr.t(last_out + 1) - t0;
    }
    m.overshoot = std::max(0.0, peak) / std::abs(delta) * 100.0;
}

std::string svg_plot(const Trajectory& tr) {
    const Eigen::Index p = tr.y.cols();
    const double width = 640.0;
    const double panel = 220.0;
    const double pad = 40.0;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << panel * static_cast<double>(p) << "\">\n";
    const double t0 = tr.t(0);
    const double t1 = tr.t(tr.t.size() - 1) > t0 ? tr.t(tr.t.size() - 1) : t0 + 1.0;
    for (Eigen::Index ch = 0; ch < p; ++ch) {
        double lo = std::min(tr.y.col(ch).minCoeff(), tr.r.col(ch).minCoeff());
        double hi = std::max(tr.y.col(ch).maxCoeff(), tr.r.col(ch).maxCoeff());
        if (hi - lo < 1e-9) {
            lo -= 1.0;
            hi += 1.0;
        }
        const double top = panel * static_cast<double>(ch);
        auto line = [&](const Eigen::VectorXd& v, const char* color) {
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
            for (Eigen::Index k = 0; k < v.size(); ++k) {
                const double x = pad + (tr.t(k) - t0) / (t1 - t0) * (width - 2 * pad);
                const double y = top + pad / 2 + (hi - v(k)) / (hi - lo) * (panel - pad);
                os << x << ',' << y << ' ';
            }
            os << "\"/>\n";
        };
        os << "<text x=\"4\" y=\"" << top + 14 << "\" font-size=\"12\">y" << ch + 1 << " [" << lo << ", " << hi
           << "]</text>\n";
        line(tr.r.col(ch), "gray");
        line(tr.y.col(ch), "blue");
    }
    os << "</svg>\n";
    return os.str();
}

std::map<std::string, std::string> read_summary(const fs::path& path) {
    std::map<std::string, std::string> out;
    std::istringstream is(read_text(path));
    std::string line;
    while (std::getline(is, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos || line.empty() || line[0] == '#') {
            continue;
        }
        out[trim(line.substr(0, colon))] = trim(line.substr(colon + 1));
    }
    return out;
}

} // namespace

Eigen::Index ExperimentConfig::steps() const {
    return static_cast<Eigen::Index>(std::llround(duration / ts()));
}

fs::path ExperimentConfig::resolved_model_dir() const {
    if (model_dir.empty()) {
        return run_dir() / "identify";
    }
    return model_dir.is_absolute() ? model_dir : output_root / model_dir;
}

const ModelSpec& ExperimentConfig::model(const std::string& id) const {
    for (const auto& m : models) {
        if (m.id == id) {
            return m;
        }
    }
    throw ConfigError("model '" + id + "' is not defined in [identification] models");
}

ExperimentConfig load_experiment(const fs::path& path, const std::optional<fs::path>& output_root) {
    if (!fs::exists(path)) {
        throw IoError("config file " + path.string() + " does not exist");
    }
    const std::string text = read_text(path);
    const std::set<std::string> headers = section_headers(text);
    ptree pt;
    try {
        std::istringstream is(text);
        boost::property_tree::read_ini(is, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& kv : pt) {
        if (kv.second.empty() && !kv.second.data().empty()) {
            throw ConfigError(path.string() + ": key '" + kv.first + "' appears outside any section");
        }
    }

    ExperimentConfig cfg;
    std::set<std::string> known_sections;
    auto section = [&](const std::string& name) {
        known_sections.insert(name);
        return Section(name, find_section(pt, name));
    };

    Section exp = section("experiment");
    cfg.name = exp.str("name", path.stem().string());
    if (cfg.name.empty() || cfg.name.find('/') != std::string::npos) {
        throw ConfigError("[experiment] name must be a non-empty plain directory name");
    }
    exp.reject_unknown();

    Section pl = section("plant");
    cfg.plant = make_default_fccu();
    auto& P = cfg.plant;
    const std::string source = pl.str("source", "surrogate");
    if (source == "surrogate") {
        cfg.plant_source = PlantSource::Surrogate;
    } else if (source == "external-csv") {
        cfg.plant_source = PlantSource::ExternalCsv;
        const auto csv = pl.raw("csv");
        if (!csv) {
            throw ConfigError("[plant] source = external-csv needs a csv key");
        }
        cfg.plant_csv = fs::path(*csv).is_absolute() ? fs::path(*csv) : path.parent_path() / *csv;
    } else {
        throw ConfigError("[plant] source must be surrogate or external-csv, got '" + source + "'");
    }
    (void)pl.raw("csv");
    P.ts = pl.num("ts", P.ts);
    for (int r = 0; r < 2; ++r) {
        const std::string tag = r == 0 ? "low_" : "high_";
        auto& core = P.cores[static_cast<std::size_t>(r)];
        core.A = pl.mat(tag + "A", core.A);
        core.B = pl.mat(tag + "B", core.B);
        core.C = pl.mat(tag + "C", core.C);
        core.D = pl.mat(tag + "D", core.D);
    }
    const Eigen::Index n = P.order();
    const Eigen::Index m = P.inputs();
    const Eigen::Index p = P.outputs();
    P.proxy = pl.vec("proxy", P.proxy.transpose(), n).transpose();
    P.regime_threshold = pl.num("regime_threshold", P.regime_threshold);
    P.regime_sharpness = pl.num("regime_sharpness", P.regime_sharpness);
    P.curvature = pl.vec("curvature", P.curvature, p);
    P.noise_std = pl.vec("noise_std", P.noise_std, p);
    P.process_noise_std = pl.vec("process_noise_std", Eigen::VectorXd::Zero(n), n);
    P.u_ss = pl.vec("u_ss", P.u_ss, m);
    P.y_ss = pl.vec("y_ss", P.y_ss, p);
    const std::string entry = pl.str("disturbance_entry", "output");
    if (entry == "output") {
        P.disturbance_entry = DisturbanceEntry::Output;
    } else if (entry == "input") {
        P.disturbance_entry = DisturbanceEntry::Input;
    } else {
        throw ConfigError("[plant] disturbance_entry must be output or input");
    }
    P.disturbance_gain = pl.mat("disturbance_gain", P.disturbance_gain);
    if (P.disturbance_gain.rows() == 1 && P.disturbance_gain.cols() > 1) {
        P.disturbance_gain.transposeInPlace(); // a single row lists one gain per channel
    }
    pl.reject_unknown();
    P.validate();

    Section ex = section("excitation");
    {
        const Eigen::VectorXd lengths = ex.vec("register_length", Eigen::Vector2d(10, 11), m);
        const Eigen::VectorXd seeds = ex.vec("seed", Eigen::VectorXd::Ones(m), m);
        const Eigen::VectorXd amplitude = ex.vec("amplitude", Eigen::Vector2d(15.0, 1.0), m);
        const int clock = ex.integer("clock_period", 1);
        const int samples = ex.integer("samples", 5000);
        std::vector<std::vector<int>> taps(static_cast<std::size_t>(m));
        if (const auto t = ex.raw("taps")) {
            const auto groups = split_on(*t, ';');
            if (static_cast<Eigen::Index>(groups.size()) != m) {
                throw ConfigError("[excitation] taps needs one group per input, separated by ';'");
            }
            for (std::size_t i = 0; i < groups.size(); ++i) {
                const Eigen::VectorXd g = parse_vector(groups[i], ex.where("taps"));
                for (Eigen::Index j = 0; j < g.size(); ++j) {
                    taps[i].push_back(static_cast<int>(g(j)));
                }
            }
        }
        if (samples < 2) {
            throw ConfigError("[excitation] samples must be >= 2");
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            if (!(amplitude(i) > 0.0)) {
                throw ConfigError("[excitation] amplitude must be positive");
            }
            if (lengths(i) != std::floor(lengths(i)) || seeds(i) != std::floor(seeds(i)) || seeds(i) < 1) {
                throw ConfigError("[excitation] register_length and seed must be positive integers");
            }
            PrbsSpec s;
            s.register_length = static_cast<int>(lengths(i));
            s.taps = taps[static_cast<std::size_t>(i)];
            s.low = P.u_ss(i) - amplitude(i);
            s.high = P.u_ss(i) + amplitude(i);
            s.clock_period = clock;
            s.total_length = static_cast<std::size_t>(samples);
            s.seed = static_cast<std::uint32_t>(seeds(i));
            cfg.excitation.push_back(std::move(s));
        }
    }
    ex.reject_unknown();

    Section id = section("identification");
    cfg.split_fraction = id.num("split", 0.5);
    const std::string op = id.str("operating_point", "plant");
    if (op != "plant" && op != "mean") {
        throw ConfigError("[identification] operating_point must be plant or mean");
    }
    cfg.known_operating_point = op == "plant";
    if (const auto d = id.raw("model_dir")) {
        cfg.model_dir = *d;
    }
    std::vector<std::string> model_ids;
    {
        std::istringstream is(id.str("models", "default"));
        std::string tok;
        while (is >> tok) {
            model_ids.push_back(tok);
        }
    }
    if (model_ids.empty()) {
        throw ConfigError("[identification] models lists no model");
    }
    id.reject_unknown();
    for (const auto& mid : model_ids) {
        for (const auto& other : cfg.models) {
            if (other.id == mid) {
                throw ConfigError("[identification] model '" + mid + "' listed twice");
            }
        }
        Section ms = section("model." + mid);
        ModelSpec spec;
        spec.id = mid;
        spec.n4sid.future_horizon = ms.integer("future_horizon", spec.n4sid.future_horizon);
        spec.n4sid.past_horizon = ms.integer("past_horizon", spec.n4sid.past_horizon);
        const std::string order = ms.str("order", "auto");
        if (order != "auto") {
            spec.n4sid.order = parse_int(order, ms.where("order"));
        }
        spec.n4sid.order_min = ms.integer("order_min", spec.n4sid.order_min);
        spec.n4sid.order_max = ms.integer("order_max", spec.n4sid.order_max);
        spec.n4sid.estimate_feedthrough = ms.flag("feedthrough", spec.n4sid.estimate_feedthrough);
        spec.n4sid.remove_mean = !cfg.known_operating_point;
        ms.reject_unknown();
        cfg.models.push_back(std::move(spec));
    }

    Section ct = section("controller");
    auto& C = cfg.controller;
    C.ts = P.ts;
    C.prediction_horizon = ct.integer("prediction_horizon", 20);
    C.control_horizon = ct.integer("control_horizon", 5);
    C.output_weights = ct.vec("output_weights", Eigen::VectorXd::Ones(p), p);
    C.move_weights = ct.vec("move_weights", Eigen::VectorXd::Constant(m, 0.1), m);
    C.y_min = ct.vec("y_min", Eigen::VectorXd::Constant(p, -kInf), p);
    C.y_max = ct.vec("y_max", Eigen::VectorXd::Constant(p, kInf), p);
    if (ct.raw("u_min")) {
        C.u_min = ct.vec("u_min", {}, m);
    }
    if (ct.raw("u_max")) {
        C.u_max = ct.vec("u_max", {}, m);
    }
    if (ct.raw("du_max")) {
        C.du_max = ct.vec("du_max", {}, m);
    }
    C.soft_penalty = ct.num("soft_penalty", C.soft_penalty);
    C.qp.tol = ct.num("qp_tolerance", C.qp.tol);
    C.qp.max_iter = ct.integer("qp_max_iterations", C.qp.max_iter);
    ct.reject_unknown();
    C.validate(m, p);

    Section mm = section("multimodel");
    {
        std::istringstream is(mm.str("bank", model_ids.front()));
        std::string tok;
        while (is >> tok) {
            (void)cfg.model(tok);
            cfg.bank.push_back(tok);
        }
        if (cfg.bank.empty()) {
            throw ConfigError("[multimodel] bank lists no model");
        }
    }
    cfg.sync = parse_sync_mode(mm.str("sync_mode", "kalman-only"));
    cfg.hysteresis = mm.num("hysteresis", 0.0);
    if (!(cfg.hysteresis >= 0.0)) {
        throw ConfigError("[multimodel] hysteresis must be >= 0");
    }
    mm.reject_unknown();

    Section run = section("run");
    cfg.duration = run.num("duration", 100.0);
    if (!(cfg.duration > 0.0)) {
        throw ConfigError("[run] duration must be positive");
    }
    const double ratio = cfg.duration / P.ts;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
        throw ConfigError("[run] duration " + fmt(cfg.duration) + " s is not a multiple of ts = " + fmt(P.ts) + " s");
    }
    const double seed = run.num("seed", 1.0);
    if (seed < 0 || seed != std::floor(seed)) {
        throw ConfigError("[run] seed must be a nonnegative integer");
    }
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.setpoints =
        validate_schedule_times(parse_schedule(run.str("setpoints", ""), p, run.where("setpoints")), cfg.duration,
                                "setpoints");
    cfg.disturbances = validate_schedule_times(
        parse_schedule(run.str("disturbances", ""), P.disturbances(), run.where("disturbances")), cfg.duration,
        "disturbances");
    run.reject_unknown();
    cfg.plant.seed = cfg.seed;

    Section out = section("output");
    cfg.output_root = out.str("directory", "runs");
    cfg.svg = out.flag("svg", false);
    out.reject_unknown();
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) {
        cfg.output_root = env;
    }
    if (output_root) {
        cfg.output_root = *output_root;
    }

    for (const auto& name : headers) {
        if (!known_sections.count(name)) {
            throw ConfigError(path.string() + ": unknown section [" + name + "]");
        }
    }
    for (const auto& kv : pt) {
        if (!known_sections.count(kv.first)) {
            throw ConfigError(path.string() + ": unknown section [" + kv.first + "]");
        }
    }
    // Sections every command needs.
    if (cfg.plant_source == PlantSource::Surrogate) {
        require_section(pt, headers, "excitation", path);
    }
    require_section(pt, headers, "identification", path);
    return cfg;
}

std::string resolved_config_text(const ExperimentConfig& cfg) {
    std::ostringstream os;
    const auto& P = cfg.plant;
    os << "[experiment]\nname = " << cfg.name << "\n\n";
    os << "[plant]\nsource = " << (cfg.plant_source == PlantSource::Surrogate ? "surrogate" : "external-csv") << '\n';
    if (cfg.plant_source == PlantSource::ExternalCsv) {
        os << "csv = " << cfg.plant_csv.string() << '\n';
    }
    os << "ts = " << fmt(P.ts) << '\n';
    for (int r = 0; r < 2; ++r) {
        const std::string tag = r == 0 ? "low_" : "high_";
        const auto& core = P.cores[static_cast<std::size_t>(r)];
        os << tag << "A = " << fmt_mat(core.A) << '\n'
           << tag << "B = " << fmt_mat(core.B) << '\n'
           << tag << "C = " << fmt_mat(core.C) << '\n'
           << tag << "D = " << fmt_mat(core.D) << '\n';
    }
    os << "proxy = " << fmt_vec(P.proxy.transpose()) << '\n'
       << "regime_threshold = " << fmt(P.regime_threshold) << '\n'
       << "regime_sharpness = " << fmt(P.regime_sharpness) << '\n'
       << "curvature = " << fmt_vec(P.curvature) << '\n'
       << "noise_std = " << fmt_vec(P.noise_std) << '\n'
       << "process_noise_std = " << fmt_vec(P.process_noise_std.size() ? P.process_noise_std : Eigen::VectorXd::Zero(P.order())) << '\n'
       << "u_ss = " << fmt_vec(P.u_ss) << '\n'
       << "y_ss = " << fmt_vec(P.y_ss) << '\n'
       << "disturbance_entry = " << (P.disturbance_entry == DisturbanceEntry::Output ? "output" : "input") << '\n'
       << "disturbance_gain = " << fmt_mat(P.disturbance_gain) << "\n\n";

    os << "[excitation]\n";
    Eigen::VectorXd lengths(static_cast<Eigen::Index>(cfg.excitation.size()));
    Eigen::VectorXd seeds(lengths.size()), amplitude(lengths.size());
    std::string taps;
    for (std::size_t i = 0; i < cfg.excitation.size(); ++i) {
        const auto& s = cfg.excitation[i];
        const auto k = static_cast<Eigen::Index>(i);
        lengths(k) = s.register_length;
        seeds(k) = s.seed;
        amplitude(k) = (s.high - s.low) / 2.0;
        const auto t = s.taps.empty() ? primitive_taps(s.register_length) : s.taps;
        taps += i ? "; " : "";
        for (std::size_t j = 0; j < t.size(); ++j) {
            taps += (j ? " " : "") + std::to_string(t[j]);
        }
    }
    os << "register_length = " << fmt_vec(lengths) << "\nseed = " << fmt_vec(seeds) << "\ntaps = " << taps
       << "\namplitude = " << fmt_vec(amplitude) << '\n';
    if (!cfg.excitation.empty()) {
        os << "clock_period = " << cfg.excitation.front().clock_period
           << "\nsamples = " << cfg.excitation.front().total_length << '\n';
    }
    os << '\n';

    os << "[identification]\nsplit = " << fmt(cfg.split_fraction)
       << "\noperating_point = " << (cfg.known_operating_point ? "plant" : "mean") << "\nmodels =";
    for (const auto& mspec : cfg.models) {
        os << ' ' << mspec.id;
    }
    os << '\n';
    if (!cfg.model_dir.empty()) {
        os << "model_dir = " << cfg.model_dir.string() << '\n';
    }
    os << '\n';
    for (const auto& mspec : cfg.models) {
        const auto& c = mspec.n4sid;
        os << "[model." << mspec.id << "]\nfuture_horizon = " << c.future_horizon
           << "\npast_horizon = " << c.past_horizon << "\norder = " << (c.order ? std::to_string(*c.order) : "auto")
           << "\norder_min = " << c.order_min << "\norder_max = " << c.order_max
           << "\nfeedthrough = " << (c.estimate_feedthrough ? "true" : "false") << "\n\n";
    }

    const auto& C = cfg.controller;
    os << "[controller]\nprediction_horizon = " << C.prediction_horizon << "\ncontrol_horizon = " << C.control_horizon
       << "\noutput_weights = " << fmt_vec(C.output_weights) << "\nmove_weights = " << fmt_vec(C.move_weights)
       << "\ny_min = " << fmt_vec(C.y_min) << "\ny_max = " << fmt_vec(C.y_max) << '\n';
    if (C.u_min) {
        os << "u_min = " << fmt_vec(*C.u_min) << '\n';
    }
    if (C.u_max) {
        os << "u_max = " << fmt_vec(*C.u_max) << '\n';
    }
    if (C.du_max) {
        os << "du_max = " << fmt_vec(*C.du_max) << '\n';
    }
    os << "soft_penalty = " << fmt(C.soft_penalty) << "\nqp_tolerance = " << fmt(C.qp.tol)
       << "\nqp_max_iterations = " << C.qp.max_iter << "\n\n";

    os << "[multimodel]\nbank =";
    for (const auto& b : cfg.bank) {
        os << ' ' << b;
    }
    os << "\nsync_mode = " << to_string(cfg.sync) << "\nhysteresis = " << fmt(cfg.hysteresis) << "\n\n";

    os << "[run]\nduration = " << fmt(cfg.duration) << "\nseed = " << cfg.seed
       << "\nsetpoints = " << fmt_schedule(cfg.setpoints) << "\ndisturbances = " << fmt_schedule(cfg.disturbances)
       << "\n\n";
    os << "[output]\ndirectory = " << cfg.output_root.string() << "\nsvg = " << (cfg.svg ? "true" : "false") << '\n';
    return os.str();
}

Eigen::VectorXd schedule_value(const std::vector<ScheduleEntry>& schedule, double t, const Eigen::VectorXd& initial) {
    const Eigen::VectorXd* v = &initial;
    for (const auto& e : schedule) {
        // Half-sample slack so a change at 84 s lands on the sample at 84 s despite round-off.
        if (e.t <= t + 1e-9 * std::max(1.0, std::abs(t))) {
            v = &e.value;
        } else {
            break;
        }
    }
    return *v;
}

Eigen::MatrixXd excitation_inputs(const ExperimentConfig& cfg) {
    if (cfg.excitation.empty()) {
        throw ConfigError("no [excitation] section");
    }
    const auto N = static_cast<Eigen::Index>(cfg.excitation.front().total_length);
    Eigen::MatrixXd U(N, static_cast<Eigen::Index>(cfg.excitation.size()));
    for (std::size_t i = 0; i < cfg.excitation.size(); ++i) {
        U.col(static_cast<Eigen::Index>(i)) = prbs_generate(cfg.excitation[i]);
    }
    return U;
}

Dataset collect_identification_data(const ExperimentConfig& cfg) {
    if (cfg.plant_source == PlantSource::ExternalCsv) {
        Dataset d = load_csv(cfg.plant_csv);
        if (d.inputs() != cfg.plant.inputs() || d.outputs() != cfg.plant.outputs()) {
            throw DimensionError("replayed CSV has " + std::to_string(d.inputs()) + " inputs and " +
                                 std::to_string(d.outputs()) + " outputs, the plant section " +
                                 std::to_string(cfg.plant.inputs()) + " and " + std::to_string(cfg.plant.outputs()));
        }
        return d;
    }
    const Eigen::MatrixXd U = excitation_inputs(cfg);
    FccuPlant plant(cfg.plant);
    Eigen::MatrixXd Y(U.rows(), cfg.plant.outputs());
    for (Eigen::Index k = 0; k < U.rows(); ++k) {
        Y.row(k) = plant.step(U.row(k).transpose()).transpose();
    }
    return Dataset(U, Y, cfg.plant.ts);
}

IdentifyResult identify(const ExperimentConfig& cfg) {
    IdentifyResult out{collect_identification_data(cfg), {}, {}};
    const auto [train, valid] = split(out.data, cfg.split_fraction);
    std::optional<OperatingPoint> op;
    if (cfg.known_operating_point) {
        op = OperatingPoint{cfg.plant.u_ss, cfg.plant.y_ss};
    }
    for (const auto& spec : cfg.models) {
        IdentificationReport rep = [&] {
            try {
                return estimate_n4sid(train, spec.n4sid, op, &valid);
            } catch (const Error& e) {
                throw NumericalError("identification of model '" + spec.id + "' failed: " + e.what());
            }
        }();
        out.models.push_back(IdentifiedModel{spec.id, rep.model, rep.operating_point});
        out.reports.push_back(std::move(rep));
    }
    return out;
}

ControlMode parse_control_mode(const std::string& text) {
    if (text == "single") {
        return ControlMode::Single;
    }
    if (text == "multi") {
        return ControlMode::Multi;
    }
    throw ConfigError("--mode must be single or multi, got '" + text + "'");
}

const char* to_string(ControlMode mode) { return mode == ControlMode::Single ? "single" : "multi"; }

Trajectory run_closed_loop(const ExperimentConfig& cfg, const std::vector<IdentifiedModel>& models, ControlMode mode) {
    if (cfg.plant_source != PlantSource::Surrogate) {
        throw ConfigError("closed-loop runs need [plant] source = surrogate");
    }
    auto find = [&](const std::string& id) -> const IdentifiedModel& {
        for (const auto& m : models) {
            if (m.id == id) {
                return m;
            }
        }
        throw ConfigError("no identified model '" + id + "' available for the bank");
    };
    const std::size_t bank_size = mode == ControlMode::Single ? 1 : cfg.bank.size();
    std::vector<BankEntry> entries;
    for (std::size_t i = 0; i < bank_size; ++i) {
        const auto& im = find(cfg.bank[i]);
        entries.push_back(BankEntry{static_cast<int>(i),
                                    MpcController(im.model, cfg.controller, im.operating_point, cfg.plant.u_ss)});
    }
    std::optional<ModelBank> bank;
    if (mode == ControlMode::Multi) {
        bank.emplace(std::move(entries), cfg.sync, cfg.hysteresis);
    }

    FccuPlant plant(cfg.plant);
    const Eigen::Index K = cfg.steps();
    const Eigen::Index m = cfg.plant.inputs();
    const Eigen::Index p = cfg.plant.outputs();
    const Eigen::VectorXd d0 = Eigen::VectorXd::Zero(cfg.plant.disturbances());
    Trajectory tr;
    tr.t.resize(K);
    tr.r.resize(K, p);
    tr.y.resize(K, p);
    tr.u.resize(K, m);
    tr.du.resize(K, m);
    tr.cost.resize(K);
    tr.model_id.assign(static_cast<std::size_t>(K), -1);
    tr.status.assign(static_cast<std::size_t>(K), StepStatus::Optimal);

    Eigen::VectorXd u = cfg.plant.u_ss;
    for (Eigen::Index k = 0; k < K; ++k) {
        const double t = static_cast<double>(k) * cfg.ts();
        const Eigen::VectorXd r = schedule_value(cfg.setpoints, t, cfg.plant.y_ss);
        const Eigen::VectorXd d = schedule_value(cfg.disturbances, t, d0);
        Eigen::VectorXd y;
        try {
            y = plant.step(u, d);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(to_string(mode)) + " run aborted: " + e.what());
        }
        MpcPlan plan;
        int selected = 0;
        double cost = 0.0;
        if (bank) {
            MultiModelStep s = bank->step(y, r);
            for (const auto& diag : s.diagnostics) {
                tr.events.push_back("t=" + fmt(t) + " " + diag);
            }
            selected = s.selected;
            cost = selected >= 0 ? s.costs(selected) : kNaN;
            plan = std::move(s.plan);
        } else {
            plan = entries.front().controller.control_step(y, r);
            selected = plan.status == StepStatus::Hold ? -1 : 0;
            cost = plan.status == StepStatus::Hold ? kNaN : plan.cost;
        }
        const Eigen::VectorXd u_new = bank ? bank->entries().front().controller.u_prev() : plan.u;
        if (plan.status == StepStatus::SoftFallback) {
            tr.events.push_back("t=" + fmt(t) + " soft fallback engaged, slack " + fmt(plan.slack));
        } else if (plan.status == StepStatus::Hold) {
            tr.events.push_back("t=" + fmt(t) + " input held");
        }
        for (const auto& w : plan.warnings) {
            tr.events.push_back("t=" + fmt(t) + " " + w);
        }
        tr.t(k) = t;
        tr.r.row(k) = r.transpose();
        tr.y.row(k) = y.transpose();
        tr.u.row(k) = u_new.transpose();
        tr.du.row(k) = (u_new - u).transpose();
        tr.cost(k) = cost;
        tr.model_id[static_cast<std::size_t>(k)] = selected;
        tr.status[static_cast<std::size_t>(k)] = plan.status;
        u = u_new;
    }
    return tr;
}

RunMetrics compute_metrics(const Trajectory& tr, const Eigen::VectorXd& y_min, const Eigen::VectorXd& y_max,
                           std::optional<double> disturbance_onset, std::size_t bank_size) {
    RunMetrics out;
    const Eigen::Index K = tr.t.size();
    const Eigen::Index p = tr.y.cols();
    const double ts = K > 1 ? tr.t(1) - tr.t(0) : 1.0;
    for (Eigen::Index ch = 0; ch < p; ++ch) {
        ChannelMetrics c;
        for (Eigen::Index k = 0; k < K; ++k) {
            const double e = std::abs(tr.r(k, ch) - tr.y(k, ch)) * ts;
            c.iae += e;
            if (!disturbance_onset || tr.t(k) >= *disturbance_onset - 1e-9) {
                c.iae_post_disturbance += e;
            }
        }
        step_metrics(tr, ch, c);
        out.channels.push_back(c);
    }
    for (Eigen::Index k = 0; k < K; ++k) {
        const bool outside = ((tr.y.row(k).transpose() - y_min).array() < 0.0).any() ||
                             ((tr.y.row(k).transpose() - y_max).array() > 0.0).any();
        // y_k is produced by the decision logged one row earlier.
        const bool softened = k > 0 && tr.status[static_cast<std::size_t>(k - 1)] == StepStatus::SoftFallback;
        if (outside) {
            ++out.violations;
            if (!softened) {
                ++out.violations_hard;
            }
        }
        const auto s = tr.status[static_cast<std::size_t>(k)];
        out.fallbacks += s == StepStatus::SoftFallback;
        out.holds += s == StepStatus::Hold;
    }
    std::vector<long> counts(bank_size, 0);
    for (int id : tr.model_id) {
        if (id >= 0 && static_cast<std::size_t>(id) < bank_size) {
            ++counts[static_cast<std::size_t>(id)];
        }
    }
    out.selection_frequency.assign(bank_size, 0.0);
    for (std::size_t i = 0; i < bank_size; ++i) {
        out.selection_frequency[i] = static_cast<double>(counts[i]) / static_cast<double>(std::max<Eigen::Index>(K, 1));
    }
    return out;
}

void write_trajectory_csv(const Trajectory& tr, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    const Eigen::Index p = tr.y.cols();
    const Eigen::Index m = tr.u.cols();
    out << 't';
    for (Eigen::Index i = 0; i < p; ++i) {
        out << ",r" << i + 1;
    }
    for (Eigen::Index i = 0; i < p; ++i) {
        out << ",y" << i + 1;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
        out << ",u" << i + 1;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
        out << ",du" << i + 1;
    }
    out << ",J,model_id\n";
    for (Eigen::Index k = 0; k < tr.t.size(); ++k) {
        out << fmt(tr.t(k));
        for (Eigen::Index i = 0; i < p; ++i) {
            out << ',' << fmt(tr.r(k, i));
        }
        for (Eigen::Index i = 0; i < p; ++i) {
            out << ',' << fmt(tr.y(k, i));
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            out << ',' << fmt(tr.u(k, i));
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            out << ',' << fmt(tr.du(k, i));
        }
        out << ',' << fmt(tr.cost(k)) << ',' << tr.model_id[static_cast<std::size_t>(k)] << '\n';
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

Trajectory read_trajectory_csv(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path.string() + ": empty trajectory file", 1);
    }
    const auto header = split_on(line, ',');
    Eigen::Index p = 0, m = 0;
    for (const auto& h : header) {
        p += h.size() > 1 && h[0] == 'y';
        m += h.size() > 1 && h[0] == 'u';
    }
    const std::size_t expected = static_cast<std::size_t>(1 + 2 * p + 2 * m + 2);
    if (header.size() != expected || header.front() != "t" || header[expected - 2] != "J" ||
        header.back() != "model_id") {
        throw ParseError(path.string() + ": header is not a trajectory header", 1);
    }
    std::vector<std::vector<double>> rows;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        const auto cells = split_on(line, ',');
        if (cells.size() != expected) {
            throw ParseError(path.string() + ": line " + std::to_string(lineno) + " has " +
                                 std::to_string(cells.size()) + " fields, expected " + std::to_string(expected),
                             lineno);
        }
        std::vector<double> v;
        for (const auto& c : cells) {
            try {
                v.push_back(c == "nan" ? kNaN : parse_double(c, "line " + std::to_string(lineno)));
            } catch (const ConfigError& e) {
                throw ParseError(path.string() + ": " + e.what(), lineno);
            }
        }
        rows.push_back(std::move(v));
    }
    const auto K = static_cast<Eigen::Index>(rows.size());
    if (K == 0) {
        throw ParseError(path.string() + ": no data rows", lineno);
    }
    Trajectory tr;
    tr.t.resize(K);
    tr.r.resize(K, p);
    tr.y.resize(K, p);
    tr.u.resize(K, m);
    tr.du.resize(K, m);
    tr.cost.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        const auto& v = rows[static_cast<std::size_t>(k)];
        std::size_t c = 0;
        tr.t(k) = v[c++];
        for (Eigen::Index i = 0; i < p; ++i) {
            tr.r(k, i) = v[c++];
        }
        for (Eigen::Index i = 0; i < p; ++i) {
            tr.y(k, i) = v[c++];
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            tr.u(k, i) = v[c++];
        }
        for (Eigen::Index i = 0; i < m; ++i) {
            tr.du(k, i) = v[c++];
        }
        tr.cost(k) = v[c++];
        tr.model_id.push_back(static_cast<int>(v[c]));
        tr.status.push_back(StepStatus::Optimal);
    }
    return tr;
}

std::vector<IdentifiedModel> load_bank_models(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.resolved_model_dir();
    std::vector<IdentifiedModel> out;
    std::set<std::string> seen;
    for (const auto& id : cfg.bank) {
        if (!seen.insert(id).second) {
            continue;
        }
        const fs::path file = dir / model_file(id);
        if (!fs::exists(file)) {
            throw IoError("model file " + file.string() + " not found; run identify first or pass --identify");
        }
        LoadedModel lm = load_model(file);
        OperatingPoint op = lm.operating_point.value_or(
            OperatingPoint{Eigen::VectorXd::Zero(lm.model.inputs()), Eigen::VectorXd::Zero(lm.model.outputs())});
        out.push_back(IdentifiedModel{id, std::move(lm.model), std::move(op)});
    }
    return out;
}

fs::path cmd_identify(const ExperimentConfig& cfg) {
    const IdentifyResult res = identify(cfg);
    const fs::path dir = cfg.resolved_model_dir();
    ensure_dir(dir);
    write_text(dir / "config.ini", resolved_config_text(cfg));
    save_csv(res.data, dir / "dataset.csv");
    std::ostringstream fits;
    const auto n_train = static_cast<Eigen::Index>(
        std::floor(static_cast<double>(res.data.samples()) * cfg.split_fraction));
    fits << "samples: " << res.data.samples() << "\nsplit: " << n_train << '/' << res.data.samples() - n_train
         << '\n';
    for (std::size_t i = 0; i < res.models.size(); ++i) {
        const auto& im = res.models[i];
        save_model(im.model, dir / model_file(im.id), im.operating_point);
        write_report(res.reports[i], dir / ("report_" + im.id + ".txt"));
        fits << "model " << im.id << ": order " << res.reports[i].chosen_order << ", fit_train "
             << fmt_vec(res.reports[i].fit_train);
        if (res.reports[i].fit_valid) {
            fits << ", fit_valid " << fmt_vec(*res.reports[i].fit_valid);
        }
        fits << '\n';
    }
    write_text(dir / "summary.txt", fits.str());
    write_metadata(dir, "identify");
    return dir;
}

fs::path cmd_control(const ExperimentConfig& cfg, ControlMode mode, bool identify_first) {
    if (identify_first) {
        cmd_identify(cfg);
    }
    const auto models = load_bank_models(cfg);
    const Trajectory tr = run_closed_loop(cfg, models, mode);
    const std::size_t bank_size = mode == ControlMode::Single ? 1 : cfg.bank.size();
    std::optional<double> onset;
    if (!cfg.disturbances.empty()) {
        onset = cfg.disturbances.front().t;
    }
    const RunMetrics met = compute_metrics(tr, cfg.controller.y_min, cfg.controller.y_max, onset, bank_size);

    const fs::path dir = cfg.run_dir() / to_string(mode);
    ensure_dir(dir);
    write_text(dir / "config.ini", resolved_config_text(cfg));
    write_trajectory_csv(tr, dir / "trajectory.csv");
    std::ostringstream s;
    s << "mode: " << to_string(mode) << "\nsteps: " << tr.t.size() << "\nts: " << fmt(cfg.ts())
      << "\ndisturbance_onset: " << (onset ? fmt(*onset) : "none") << '\n';
    for (std::size_t ch = 0; ch < met.channels.size(); ++ch) {
        const auto i = static_cast<Eigen::Index>(ch);
        const auto& c = met.channels[ch];
        s << channel_metric_name(i, "iae") << ": " << fmt(c.iae) << '\n'
          << channel_metric_name(i, "iae_post_disturbance") << ": " << fmt(c.iae_post_disturbance) << '\n'
          << channel_metric_name(i, "rise_time") << ": " << fmt(c.rise_time) << '\n'
          << channel_metric_name(i, "settling_time") << ": " << fmt(c.settling_time) << '\n'
          << channel_metric_name(i, "overshoot_percent") << ": " << fmt(c.overshoot) << '\n';
    }
    s << "constraint_violations: " << met.violations << "\nconstraint_violations_without_fallback: "
      << met.violations_hard << "\nsoft_fallbacks: " << met.fallbacks << "\nholds: " << met.holds << '\n';
    for (std::size_t i = 0; i < bank_size; ++i) {
        s << "selection." << cfg.bank[i] << ": " << fmt(met.selection_frequency[i]) << '\n';
    }
    s << "events: " << tr.events.size() << '\n';
    write_text(dir / "summary.txt", s.str());
    std::string events;
    for (const auto& e : tr.events) {
        events += e + '\n';
    }
    write_text(dir / "events.log", events);
    if (cfg.svg) {
        write_text(dir / "trajectory.svg", svg_plot(tr));
    }
    write_metadata(dir, std::string("control --mode ") + to_string(mode));
    return dir;
}

fs::path cmd_compare(const fs::path& run_a, const fs::path& run_b, const std::optional<fs::path>& out_dir) {
    for (const auto& d : {run_a, run_b}) {
        if (!fs::is_directory(d)) {
            throw IoError("run directory " + d.string() + " does not exist");
        }
    }
    const Trajectory a = read_trajectory_csv(run_a / "trajectory.csv");
    const Trajectory b = read_trajectory_csv(run_b / "trajectory.csv");
    if (a.t.size() != b.t.size() || a.y.cols() != b.y.cols() || a.u.cols() != b.u.cols() ||
        (a.t - b.t).cwiseAbs().maxCoeff() > 1e-9 || (a.r - b.r).cwiseAbs().maxCoeff() > 1e-9) {
        throw ConfigError("runs " + run_a.string() + " and " + run_b.string() + " have different schedules");
    }
    const auto sa = read_summary(run_a / "summary.txt");
    const auto sb = read_summary(run_b / "summary.txt");
    const std::string onset_a = sa.count("disturbance_onset") ? sa.at("disturbance_onset") : "none";
    const std::string onset_b = sb.count("disturbance_onset") ? sb.at("disturbance_onset") : "none";
    if (onset_a != onset_b) {
        throw ConfigError("runs have different disturbance schedules (" + onset_a + " vs " + onset_b + ")");
    }
    std::optional<double> onset;
    if (onset_a != "none") {
        onset = parse_double(onset_a, "disturbance_onset");
    }
    const Eigen::Index p = a.y.cols();
    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(p, -kInf);
    const Eigen::VectorXd hi = Eigen::VectorXd::Constant(p, kInf);
    const RunMetrics ma = compute_metrics(a, lo, hi, onset, 0);
    const RunMetrics mb = compute_metrics(b, lo, hi, onset, 0);

    const fs::path dir =
        out_dir ? *out_dir
                : run_a.parent_path() / ("compare-" + run_a.filename().string() + "-vs-" + run_b.filename().string());
    ensure_dir(dir);
    for (Eigen::Index ch = 0; ch < p; ++ch) {
        std::ostringstream os;
        os << "t,r,y_a,y_b\n";
        for (Eigen::Index k = 0; k < a.t.size(); ++k) {
            os << fmt(a.t(k)) << ',' << fmt(a.r(k, ch)) << ',' << fmt(a.y(k, ch)) << ',' << fmt(b.y(k, ch)) << '\n';
        }
        write_text(dir / ("overlay_y" + std::to_string(ch + 1) + ".csv"), os.str());
    }
    for (Eigen::Index ch = 0; ch < a.u.cols(); ++ch) {
        std::ostringstream os;
        os << "t,u_a,u_b\n";
        for (Eigen::Index k = 0; k < a.t.size(); ++k) {
            os << fmt(a.t(k)) << ',' << fmt(a.u(k, ch)) << ',' << fmt(b.u(k, ch)) << '\n';
        }
        write_text(dir / ("overlay_u" + std::to_string(ch + 1) + ".csv"), os.str());
    }

    // Smaller is better for every metric; NaN never wins.
    auto winner = [](double x, double y) -> const char* {
        if (std::isnan(x) && std::isnan(y)) {
            return "n/a";
        }
        if (std::isnan(y) || x < y) {
            return "a";
        }
        if (std::isnan(x) || y < x) {
            return "b";
        }
        return "tie";
    };
    std::ostringstream os;
    os << "# a = " << run_a.string() << "\n# b = " << run_b.string() << "\n# delta = b - a\n";
    os << "metric,channel,a,b,delta,winner\n";
    for (Eigen::Index ch = 0; ch < p; ++ch) {
        const auto& ca = ma.channels[static_cast<std::size_t>(ch)];
        const auto& cb = mb.channels[static_cast<std::size_t>(ch)];
        const std::pair<const char*, std::pair<double, double>> rows[] = {
            {"iae", {ca.iae, cb.iae}},
            {"iae_post_disturbance", {ca.iae_post_disturbance, cb.iae_post_disturbance}},
            {"rise_time", {ca.rise_time, cb.rise_time}},
            {"settling_time", {ca.settling_time, cb.settling_time}},
            {"overshoot_percent", {ca.overshoot, cb.overshoot}},
        };
        for (const auto& [name, vals] : rows) {
            os << name << ",y" << ch + 1 << ',' << fmt(vals.first) << ',' << fmt(vals.second) << ','
               << fmt(vals.second - vals.first) << ',' << winner(vals.first, vals.second) << '\n';
        }
    }
    write_text(dir / "compare.csv", os.str());
    return dir;
}

fs::path cmd_prbs_preview(const ExperimentConfig& cfg) {
    const Eigen::MatrixXd U = excitation_inputs(cfg);
    const fs::path dir = cfg.run_dir() / "prbs-preview";
    ensure_dir(dir);
    std::ostringstream csv;
    csv << 't';
    for (Eigen::Index i = 0; i < U.cols(); ++i) {
        csv << ",u" << i + 1;
    }
    csv << '\n';
    for (Eigen::Index k = 0; k < U.rows(); ++k) {
        csv << fmt(static_cast<double>(k) * cfg.ts());
        for (Eigen::Index i = 0; i < U.cols(); ++i) {
            csv << ',' << fmt(U(k, i));
        }
        csv << '\n';
    }
    write_text(dir / "prbs.csv", csv.str());
    std::ostringstream s;
    for (std::size_t i = 0; i < cfg.excitation.size(); ++i) {
        const auto& spec = cfg.excitation[i];
        const auto col = U.col(static_cast<Eigen::Index>(i));
        int switches = 0;
        for (Eigen::Index k = 1; k < col.size(); ++k) {
            switches += col(k) != col(k - 1);
        }
        const auto taps = spec.taps.empty() ? primitive_taps(spec.register_length) : spec.taps;
        std::string tap_text;
        for (std::size_t j = 0; j < taps.size(); ++j) {
            tap_text += (j ? " " : "") + std::to_string(taps[j]);
        }
        const double high = static_cast<double>((col.array() == spec.high).count()) / static_cast<double>(col.size());
        s << "u" << i + 1 << ".register_length: " << spec.register_length << "\nu" << i + 1 << ".taps: " << tap_text
          << "\nu" << i + 1 << ".period_samples: "
          << ((std::uint64_t{1} << spec.register_length) - 1) * static_cast<std::uint64_t>(spec.clock_period)
          << "\nu" << i + 1 << ".levels: " << fmt(spec.low) << ' ' << fmt(spec.high) << "\nu" << i + 1
          << ".switches: " << switches << "\nu" << i + 1 << ".fraction_high: " << fmt(high) << '\n';
    }
    write_text(dir / "summary.txt", s.str());
    return dir;
}

} // namespace mmpc
