#include "avnft/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace avnft {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& raw) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(raw);
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    if (!raw.empty() && raw.back() == ',') out.push_back("");
    return out;
}

[[noreturn]] void bad_value(const std::string& where, const std::string& raw,
                            const char* expected) {
    throw std::invalid_argument("config: " + where + ": cannot parse '" + raw + "' as " +
                                expected);
}

long long to_ll(const std::string& where, const std::string& raw) {
    char* end = nullptr;
    const std::string t = trim(raw);
    long long v = std::strtoll(t.c_str(), &end, 10);
    if (t.empty() || end != t.c_str() + t.size()) bad_value(where, raw, "an integer");
    return v;
}

int to_int(const std::string& where, const std::string& raw) {
    return static_cast<int>(to_ll(where, raw));
}

std::uint64_t to_u64(const std::string& where, const std::string& raw) {
    char* end = nullptr;
    const std::string t = trim(raw);
    unsigned long long v = std::strtoull(t.c_str(), &end, 10);
    if (t.empty() || t[0] == '-' || end != t.c_str() + t.size())
        bad_value(where, raw, "an unsigned integer");
    return static_cast<std::uint64_t>(v);
}

double to_double(const std::string& where, const std::string& raw) {
    char* end = nullptr;
    const std::string t = trim(raw);
    double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size()) bad_value(where, raw, "a number");
    return v;
}

bool to_bool(const std::string& where, const std::string& raw) {
    const std::string t = trim(raw);
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    bad_value(where, raw, "a boolean (true/false/1/0)");
}

std::string show_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct KeyHandler {
    std::function<void(RunConfig&, const std::string& where, const std::string& raw)> set;
    std::function<std::string(const RunConfig&)> show;
};

using Schema = std::map<std::string, std::map<std::string, KeyHandler>>;

// One declarative table drives parsing, default reporting, and rendering,
// so the three can never drift apart.
Schema build_schema() {
    Schema s;
    auto add = [&s](const std::string& section, const std::string& key, KeyHandler h) {
        s[section][key] = std::move(h);
    };
    auto int_field = [&add](const std::string& sec, const std::string& key,
                            std::function<int&(RunConfig&)> ref) {
        add(sec, key,
            {[ref](RunConfig& c, const std::string& w, const std::string& raw) {
                 ref(c) = to_int(w, raw);
             },
             [ref](const RunConfig& c) {
                 return std::to_string(ref(const_cast<RunConfig&>(c)));
             }});
    };
    auto double_field = [&add](const std::string& sec, const std::string& key,
                               std::function<double&(RunConfig&)> ref) {
        add(sec, key,
            {[ref](RunConfig& c, const std::string& w, const std::string& raw) {
                 ref(c) = to_double(w, raw);
             },
             [ref](const RunConfig& c) {
                 return show_double(ref(const_cast<RunConfig&>(c)));
             }});
    };

    int_field("model", "blocks_audio", [](RunConfig& c) -> int& { return c.model.blocks_audio; });
    int_field("model", "blocks_video", [](RunConfig& c) -> int& { return c.model.blocks_video; });
    int_field("model", "d_model", [](RunConfig& c) -> int& { return c.model.d_model; });
    int_field("model", "heads", [](RunConfig& c) -> int& { return c.model.heads; });
    int_field("model", "n_audio_tokens",
              [](RunConfig& c) -> int& { return c.model.n_audio_tokens; });
    int_field("model", "n_video_tokens",
              [](RunConfig& c) -> int& { return c.model.n_video_tokens; });
    int_field("model", "shallow_boundary",
              [](RunConfig& c) -> int& { return c.model.shallow_boundary; });
    double_field("model", "detach_ratio",
                 [](RunConfig& c) -> double& { return c.model.detach_ratio; });
    int_field("model", "prompt_vocab", [](RunConfig& c) -> int& { return c.model.prompt_vocab; });

    int_field("sampler", "num_steps",
              [](RunConfig& c) -> int& { return c.train.sampler.num_steps; });
    add("sampler", "late_steps",
        {[](RunConfig& c, const std::string& w, const std::string& raw) {
             c.train.sampler.late_steps.clear();
             for (const std::string& item : split_list(raw))
                 c.train.sampler.late_steps.insert(to_int(w, item));
         },
         [](const RunConfig& c) {
             std::string out;
             for (int v : c.train.sampler.late_steps)
                 out += (out.empty() ? "" : ",") + std::to_string(v);
             return out;
         }});
    add("sampler", "seed",
        {[](RunConfig& c, const std::string& w, const std::string& raw) {
             c.train.sampler.seed = to_u64(w, raw);
         },
         [](const RunConfig& c) { return std::to_string(c.train.sampler.seed); }});

    int_field("train", "iterations", [](RunConfig& c) -> int& { return c.train.iterations; });
    int_field("train", "prompts_per_iter",
              [](RunConfig& c) -> int& { return c.train.prompts_per_iter; });
    int_field("train", "group_size", [](RunConfig& c) -> int& { return c.train.group_size; });
    int_field("train", "minibatch", [](RunConfig& c) -> int& { return c.train.minibatch; });
    double_field("train", "lr", [](RunConfig& c) -> double& { return c.train.lr; });
    double_field("train", "adam_beta1", [](RunConfig& c) -> double& { return c.train.adam_beta1; });
    double_field("train", "adam_beta2", [](RunConfig& c) -> double& { return c.train.adam_beta2; });
    double_field("train", "adam_eps", [](RunConfig& c) -> double& { return c.train.adam_eps; });
    double_field("train", "beta", [](RunConfig& c) -> double& { return c.train.nft.beta; });
    double_field("train", "lambda", [](RunConfig& c) -> double& { return c.train.nft.lambda; });
    double_field("train", "z_floor", [](RunConfig& c) -> double& { return c.train.nft.z_floor; });
    double_field("train", "clip_lo", [](RunConfig& c) -> double& { return c.train.nft.clip_lo; });
    double_field("train", "clip_hi", [](RunConfig& c) -> double& { return c.train.nft.clip_hi; });
    add("train", "eta",
        {[](RunConfig& c, const std::string& w, const std::string& raw) {
             c.train.eta.clear();
             for (const std::string& item : split_list(raw))
                 c.train.eta.push_back(to_double(w, item));
         },
         [](const RunConfig& c) {
             std::string out;
             for (double v : c.train.eta) out += (out.empty() ? "" : ",") + show_double(v);
             return out;
         }});
    add("train", "master_seed",
        {[](RunConfig& c, const std::string& w, const std::string& raw) {
             c.train.master_seed = to_u64(w, raw);
         },
         [](const RunConfig& c) { return std::to_string(c.train.master_seed); }});
    add("train", "mode",
        {[](RunConfig& c, const std::string&, const std::string& raw) {
             c.train.mode = parse_mode(trim(raw));
         },
         [](const RunConfig& c) { return mode_name(c.train.mode); }});
    add("train", "profile_gradients",
        {[](RunConfig& c, const std::string& w, const std::string& raw) {
             c.train.profile_gradients = to_bool(w, raw);
         },
         [](const RunConfig& c) { return c.train.profile_gradients ? "true" : "false"; }});

    double_field("rewards", "conflict_eps",
                 [](RunConfig& c) -> double& { return c.train.conflict_eps; });
    int_field("rewards", "corpus_size", [](RunConfig& c) -> int& { return c.train.corpus_size; });
    return s;
}

const Schema& schema() {
    static const Schema s = build_schema();
    return s;
}

}  // namespace

ConfigLoad parse_run_config(const std::string& text) {
    ConfigLoad out;
    std::set<std::string> seen;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                            ": malformed section header '" + t + "'");
            section = trim(t.substr(1, t.size() - 2));
            if (schema().find(section) == schema().end())
                throw std::invalid_argument("config: unknown section [" + section + "]");
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        ": expected key = value, got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            throw std::invalid_argument("config: line " + std::to_string(lineno) + ": key '" +
                                        key + "' appears before any section header");
        const auto& keys = schema().at(section);
        auto it = keys.find(key);
        if (it == keys.end())
            throw std::invalid_argument("config: unknown key '" + key + "' in section [" +
                                        section + "]");
        it->second.set(out.config, section + "." + key, value);
        seen.insert(section + "." + key);
    }
    for (const auto& [sec, keys] : schema())
        for (const auto& [key, handler] : keys)
            if (seen.find(sec + "." + key) == seen.end())
                out.defaulted.push_back(sec + "." + key + " = " + handler.show(out.config));
    out.config.model.validate();
    out.config.train.validate();
    return out;
}

ConfigLoad load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string render_run_config(const RunConfig& config) {
    std::string out;
    for (const char* sec : {"model", "sampler", "train", "rewards"}) {
        out += std::string("[") + sec + "]\n";
        for (const auto& [key, handler] : schema().at(sec))
            out += key + " = " + handler.show(config) + "\n";
        out += "\n";
    }
    return out;
}

}  // namespace avnft
