#include "amer/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "amer/error.hpp"

namespace amer {
namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

[[noreturn]] void bad(const std::string& what) { fail(Errc::InvalidConfig, what); }

int64_t parse_i64(std::string_view key, std::string_view v) {
    int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        bad("config: " + std::string(key) + " expects an integer, got '" + std::string(v) + "'");
    return out;
}

uint64_t parse_u64(std::string_view key, std::string_view v) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        bad("config: " + std::string(key) + " expects a non-negative integer, got '" +
            std::string(v) + "'");
    return out;
}

f64 parse_f64(std::string_view key, std::string_view v) {
    std::string buf(v);
    char* end = nullptr;
    f64 out = std::strtod(buf.c_str(), &end);
    if (end != buf.c_str() + buf.size() || buf.empty())
        bad("config: " + std::string(key) + " expects a number, got '" + buf + "'");
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad("config: " + std::string(key) + " expects true or false, got '" + std::string(v) + "'");
}

std::string fmt_f64(f64 v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

template <class T, class Fmt>
std::string fmt_list(const std::vector<T>& xs, Fmt fmt) {
    std::string out;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += fmt(xs[i]);
    }
    return out;
}

template <class Elem>
std::vector<Elem> parse_list(std::string_view key, std::string_view v,
                             Elem (*one)(std::string_view, std::string_view)) {
    std::vector<Elem> out;
    size_t pos = 0;
    while (pos <= v.size()) {
        size_t comma = v.find(',', pos);
        if (comma == std::string_view::npos) comma = v.size();
        out.push_back(one(key, trim(v.substr(pos, comma - pos))));
        pos = comma + 1;
    }
    return out;
}

struct Entry {
    const char* section;
    const char* key;
    std::function<void(FullConfig&, std::string_view)> set;
    std::function<std::string(const FullConfig&)> get;
};

template <class Map>  // Map: FullConfig& -> field&
Entry int_entry(const char* sec, const char* key, Map map) {
    return {sec, key,
            [=](FullConfig& c, std::string_view v) {
                map(c) = int(parse_i64(key, v));
            },
            [=](const FullConfig& c) { return std::to_string(map(const_cast<FullConfig&>(c))); }};
}

template <class Map>
Entry u64_entry(const char* sec, const char* key, Map map) {
    return {sec, key,
            [=](FullConfig& c, std::string_view v) { map(c) = parse_u64(key, v); },
            [=](const FullConfig& c) { return std::to_string(map(const_cast<FullConfig&>(c))); }};
}

template <class Map>
Entry f64_entry(const char* sec, const char* key, Map map) {
    return {sec, key,
            [=](FullConfig& c, std::string_view v) { map(c) = parse_f64(key, v); },
            [=](const FullConfig& c) { return fmt_f64(map(const_cast<FullConfig&>(c))); }};
}

template <class Map>
Entry bool_entry(const char* sec, const char* key, Map map) {
    return {sec, key,
            [=](FullConfig& c, std::string_view v) { map(c) = parse_bool(key, v); },
            [=](const FullConfig& c) {
                return map(const_cast<FullConfig&>(c)) ? "true" : "false";
            }};
}

template <class E, class Map>
Entry enum_entry(const char* sec, const char* key, Map map,
                 std::vector<std::pair<std::string_view, E>> names) {
    return {sec, key,
            [=](FullConfig& c, std::string_view v) {
                for (const auto& [n, e] : names)
                    if (v == n) {
                        map(c) = e;
                        return;
                    }
                std::string allowed;
                for (const auto& [n, e] : names) {
                    if (!allowed.empty()) allowed += ", ";
                    allowed += n;
                }
                bad("config: " + std::string(key) + " must be one of {" + allowed + "}, got '" +
                    std::string(v) + "'");
            },
            [=](const FullConfig& c) {
                E cur = map(const_cast<FullConfig&>(c));
                for (const auto& [n, e] : names)
                    if (e == cur) return std::string(n);
                return std::string("?");
            }};
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = [] {
        std::vector<Entry> t;
        t.push_back(enum_entry<Setting>(
            "data", "setting", [](FullConfig& c) -> Setting& { return c.data.setting; },
            {{"single", Setting::SingleInDist}, {"multi", Setting::MultiInDist}, {"ood", Setting::OOD}}));
        t.push_back(enum_entry<TransformKind>(
            "data", "transform", [](FullConfig& c) -> TransformKind& { return c.data.transform; },
            {{"linear", TransformKind::Linear}, {"mlp", TransformKind::Mlp}}));
        t.push_back(int_entry("data", "d", [](FullConfig& c) -> int& { return c.data.d; }));
        t.push_back(int_entry("data", "m", [](FullConfig& c) -> int& { return c.data.m; }));
        t.push_back(int_entry("data", "n_train", [](FullConfig& c) -> int& { return c.data.n_train; }));
        t.push_back(int_entry("data", "n_test", [](FullConfig& c) -> int& { return c.data.n_test; }));
        t.push_back(u64_entry("data", "corpus_size",
                              [](FullConfig& c) -> uint64_t& { return c.data.corpus_size; }));
        t.push_back(u64_entry("data", "seed", [](FullConfig& c) -> uint64_t& { return c.data.seed; }));
        t.push_back(bool_entry("data", "normalize_inputs",
                               [](FullConfig& c) -> bool& { return c.data.normalize_inputs; }));

        t.push_back(int_entry("model", "hidden", [](FullConfig& c) -> int& { return c.model.hidden; }));
        t.push_back(int_entry("model", "layers", [](FullConfig& c) -> int& { return c.model.layers; }));
        t.push_back(int_entry("model", "heads", [](FullConfig& c) -> int& { return c.model.heads; }));
        t.push_back(int_entry("model", "mlp_hidden",
                              [](FullConfig& c) -> int& { return c.model.mlp_hidden; }));
        t.push_back(bool_entry("model", "use_bias",
                               [](FullConfig& c) -> bool& { return c.model.use_bias; }));
        t.push_back(bool_entry("model", "detach_feedback",
                               [](FullConfig& c) -> bool& { return c.model.detach_feedback; }));

        t.push_back(enum_entry<TrainMode>(
            "train", "mode", [](FullConfig& c) -> TrainMode& { return c.train.mode; },
            {{"amer", TrainMode::Amer}, {"single_query", TrainMode::SingleQuery}}));
        t.push_back(int_entry("train", "steps", [](FullConfig& c) -> int& { return c.train.steps; }));
        t.push_back(int_entry("train", "batch_size",
                              [](FullConfig& c) -> int& { return c.train.batch_size; }));
        t.push_back(f64_entry("train", "lr", [](FullConfig& c) -> f64& { return c.train.lr; }));
        t.push_back(f64_entry("train", "tau", [](FullConfig& c) -> f64& { return c.train.tau; }));
        t.push_back(f64_entry("train", "warmup_frac",
                              [](FullConfig& c) -> f64& { return c.train.warmup_frac; }));
        t.push_back(f64_entry("train", "weight_decay",
                              [](FullConfig& c) -> f64& { return c.train.weight_decay; }));
        t.push_back(f64_entry("train", "beta1", [](FullConfig& c) -> f64& { return c.train.beta1; }));
        t.push_back(f64_entry("train", "beta2", [](FullConfig& c) -> f64& { return c.train.beta2; }));
        t.push_back(f64_entry("train", "eps", [](FullConfig& c) -> f64& { return c.train.eps; }));
        t.push_back(u64_entry("train", "seed", [](FullConfig& c) -> uint64_t& { return c.train.seed; }));
        t.push_back(int_entry("train", "checkpoint_interval",
                              [](FullConfig& c) -> int& { return c.train.checkpoint_interval; }));
        t.push_back(int_entry("train", "negatives_per_positive",
                              [](FullConfig& c) -> int& { return c.train.negatives_per_positive; }));
        t.push_back(enum_entry<SamplingPolicy>(
            "train", "sampling", [](FullConfig& c) -> SamplingPolicy& { return c.train.sampling; },
            {{"teacher_forced", SamplingPolicy::TeacherForced},
             {"scheduled", SamplingPolicy::Scheduled},
             {"always_predicted", SamplingPolicy::AlwaysPredicted}}));

        t.push_back({"eval", "ks",
                     [](FullConfig& c, std::string_view v) {
                         std::vector<int> ks;
                         for (int64_t x : parse_list<int64_t>("ks", v, parse_i64))
                             ks.push_back(int(x));
                         c.eval.ks = std::move(ks);
                     },
                     [](const FullConfig& c) {
                         return fmt_list(c.eval.ks, [](int k) { return std::to_string(k); });
                     }});
        t.push_back({"eval", "mmr_lambdas",
                     [](FullConfig& c, std::string_view v) {
                         c.eval.mmr_lambdas = parse_list<f64>("mmr_lambdas", v, parse_f64);
                     },
                     [](const FullConfig& c) { return fmt_list(c.eval.mmr_lambdas, fmt_f64); }});
        t.push_back(int_entry("eval", "mmr_pool",
                              [](FullConfig& c) -> int& { return c.eval.mmr_pool; }));
        t.push_back(int_entry("eval", "n_bins", [](FullConfig& c) -> int& { return c.eval.n_bins; }));
        t.push_back(enum_entry<DivMetric>(
            "eval", "div_metric", [](FullConfig& c) -> DivMetric& { return c.eval.div_metric; },
            {{"euclidean", DivMetric::Euclidean}, {"cosine", DivMetric::Cosine}}));
        return t;
    }();
    return table;
}

const Entry* find_entry(std::string_view section, std::string_view key) {
    for (const auto& e : entries())
        if (section == e.section && key == e.key) return &e;
    return nullptr;
}

}  // namespace

FullConfig parse_config(std::string_view text) {
    FullConfig cfg;
    std::string section;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                bad("config line " + std::to_string(line_no) + ": malformed section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            bool known = false;
            for (const auto& e : entries()) known = known || section == e.section;
            if (!known) bad("config: unknown section [" + section + "]");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string_view::npos)
            bad("config line " + std::to_string(line_no) + ": expected key = value");
        std::string_view key = trim(line.substr(0, eq));
        std::string_view value = trim(line.substr(eq + 1));
        if (section.empty())
            bad("config line " + std::to_string(line_no) + ": key before any [section]");
        const Entry* e = find_entry(section, key);
        if (!e) bad("config: unknown key " + section + "." + std::string(key));
        e->set(cfg, value);
    }
    return cfg;
}

FullConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::Io, "cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const FullConfig& cfg) {
    std::string out;
    std::string_view cur;
    for (const auto& e : entries()) {
        if (cur != e.section) {
            if (!out.empty()) out += '\n';
            out += '[';
            out += e.section;
            out += "]\n";
            cur = e.section;
        }
        out += e.key;
        out += " = ";
        out += e.get(cfg);
        out += '\n';
    }
    return out;
}

void apply_override(FullConfig& cfg, std::string_view dotted, std::string_view value) {
    size_t dot = dotted.find('.');
    if (dot == std::string_view::npos)
        bad("override '" + std::string(dotted) + "': expected section.key");
    std::string_view section = dotted.substr(0, dot);
    std::string_view key = dotted.substr(dot + 1);
    const Entry* e = find_entry(section, key);
    if (!e) bad("override: unknown key " + std::string(dotted));
    e->set(cfg, trim(value));
}

void validate_config(const FullConfig& cfg) {
    auto check = [](bool ok, const std::string& what) {
        if (!ok) bad("config: " + what);
    };
    check(cfg.data.d >= 2, "data.d must be at least 2");
    check(cfg.data.m >= 2 && cfg.data.m <= 5, "data.m must lie in [2, 5]");
    check(cfg.data.n_train >= 1, "data.n_train must be positive");
    check(cfg.data.n_test >= 0, "data.n_test must be non-negative");
    uint64_t pool = uint64_t(cfg.data.n_train + cfg.data.n_test) * uint64_t(cfg.data.m);
    check(cfg.data.corpus_size >= pool,
          "data.corpus_size must cover all targets (need at least " + std::to_string(pool) + ")");
    check(cfg.model.hidden >= 1 && cfg.model.layers >= 1 && cfg.model.heads >= 1 &&
              cfg.model.mlp_hidden >= 1,
          "model sizes must be positive");
    check(cfg.model.hidden % cfg.model.heads == 0, "model.hidden must divide by model.heads");
    check(cfg.train.steps >= 0, "train.steps must be non-negative");
    check(cfg.train.batch_size >= 2, "train.batch_size must be at least 2");
    check(cfg.train.lr > 0.0, "train.lr must be positive");
    check(cfg.train.tau > 0.0, "train.tau must be positive");
    check(cfg.train.warmup_frac >= 0.0 && cfg.train.warmup_frac <= 0.5,
          "train.warmup_frac must lie in [0, 0.5]");
    check(cfg.train.weight_decay >= 0.0, "train.weight_decay must be non-negative");
    check(cfg.train.beta1 >= 0.0 && cfg.train.beta1 < 1.0, "train.beta1 must lie in [0, 1)");
    check(cfg.train.beta2 >= 0.0 && cfg.train.beta2 < 1.0, "train.beta2 must lie in [0, 1)");
    check(cfg.train.eps > 0.0, "train.eps must be positive");
    check(cfg.train.checkpoint_interval >= 1, "train.checkpoint_interval must be positive");
    check(cfg.train.negatives_per_positive >= 0,
          "train.negatives_per_positive must be non-negative");
    check(!cfg.eval.ks.empty(), "eval.ks must not be empty");
    for (int k : cfg.eval.ks) check(k >= 1, "eval.ks entries must be positive");
    check(!cfg.eval.mmr_lambdas.empty(), "eval.mmr_lambdas must not be empty");
    for (f64 l : cfg.eval.mmr_lambdas)
        check(l >= 0.0 && l <= 1.0, "eval.mmr_lambdas entries must lie in [0, 1]");
    check(cfg.eval.mmr_pool >= 1, "eval.mmr_pool must be positive");
    check(cfg.eval.n_bins >= 2, "eval.n_bins must be at least 2");
}

}  // namespace amer
