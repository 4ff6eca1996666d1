#include "flowsg/world/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "flowsg/errors.hpp"
#include "flowsg/transport/graph_state.hpp"
#include "json.hpp"

namespace flowsg::world {

using nlohmann::json;

Split split_of(std::uint64_t id) {
    const auto r = id % 10;
    if (r < 8) return Split::train;
    return r == 8 ? Split::val : Split::test;
}

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw std::logic_error("split_name: unknown split");
}

namespace {

json scene_to_json(const Scene& s, const WorldConfig& cfg) {
    json row;
    row["id"] = s.id;
    json boxes = json::array();
    for (std::size_t i = 0; i < s.n_objects; ++i)
        boxes.push_back({s.boxes[i * 4], s.boxes[i * 4 + 1], s.boxes[i * 4 + 2],
                         s.boxes[i * 4 + 3]});
    row["boxes"] = std::move(boxes);
    row["classes"] = s.classes;
    json rels = json::array();
    std::size_t e = 0;
    for (std::size_t i = 0; i < s.n_objects; ++i)
        for (std::size_t j = 0; j < s.n_objects; ++j) {
            if (i == j) continue;
            rels.push_back({i, j, cfg.phrases[static_cast<std::size_t>(s.rel_phrases[e])]});
            ++e;
        }
    row["rels"] = std::move(rels);
    json app = json::array();
    for (std::size_t i = 0; i < s.n_objects; ++i)
        app.push_back(std::vector<double>(s.appearance.begin() + i * cfg.d_app,
                                          s.appearance.begin() + (i + 1) * cfg.d_app));
    row["appearance"] = std::move(app);
    json ctx = json::array();
    for (std::size_t i = 0; i <= s.n_objects; ++i)
        ctx.push_back(std::vector<double>(s.context.begin() + i * cfg.d_ctx,
                                          s.context.begin() + (i + 1) * cfg.d_ctx));
    row["context"] = std::move(ctx);
    return row;
}

Scene scene_from_json(const json& row, const WorldConfig& cfg, const std::string& where) {
    try {
        Scene s;
        s.id = row.at("id").get<std::uint64_t>();
        const auto& boxes = row.at("boxes");
        s.n_objects = boxes.size();
        const std::size_t n = s.n_objects;
        if (n < 2) throw DataError(where + ": scene needs at least two objects");
        s.boxes.reserve(n * 4);
        for (const auto& b : boxes) {
            if (b.size() != 4) throw DataError(where + ": box row must have 4 entries");
            for (const auto& v : b) s.boxes.push_back(v.get<double>());
        }
        s.classes = row.at("classes").get<std::vector<int>>();
        if (s.classes.size() != n) throw DataError(where + ": classes length mismatch");
        for (int c : s.classes)
            if (c < 0 || c >= cfg.k_classes) throw DataError(where + ": class out of range");

        s.rel_phrases.assign(n * (n - 1), -1);
        const auto& rels = row.at("rels");
        if (rels.size() != n * (n - 1)) throw DataError(where + ": rels must cover all pairs");
        for (const auto& r : rels) {
            if (r.size() != 3) throw DataError(where + ": rel entry must be [i, j, phrase]");
            const auto i = r[0].get<std::size_t>();
            const auto j = r[1].get<std::size_t>();
            if (i >= n || j >= n || i == j) throw DataError(where + ": rel pair out of range");
            const std::string phrase = r[2].get<std::string>();
            const auto it = std::find(cfg.phrases.begin(), cfg.phrases.end(), phrase);
            if (it == cfg.phrases.end()) throw DataError(where + ": unknown phrase " + phrase);
            s.rel_phrases[transport::edge_index(i, j, n)] =
                static_cast<int>(it - cfg.phrases.begin());
        }
        for (int p : s.rel_phrases)
            if (p < 0) throw DataError(where + ": missing relation for some pair");

        const auto& app = row.at("appearance");
        if (app.size() != n) throw DataError(where + ": appearance rows mismatch");
        s.appearance.reserve(n * cfg.d_app);
        for (const auto& a : app) {
            if (a.size() != cfg.d_app) throw DataError(where + ": appearance dim mismatch");
            for (const auto& v : a) s.appearance.push_back(v.get<double>());
        }
        const auto& ctx = row.at("context");
        if (ctx.size() != n + 1) throw DataError(where + ": context rows mismatch");
        s.context.reserve((n + 1) * cfg.d_ctx);
        for (const auto& c : ctx) {
            if (c.size() != cfg.d_ctx) throw DataError(where + ": context dim mismatch");
            for (const auto& v : c) s.context.push_back(v.get<double>());
        }
        return s;
    } catch (const json::exception& e) {
        throw DataError(where + ": " + e.what());
    }
}

}  // namespace

void save_scenes(const std::string& path, const std::vector<Scene>& scenes,
                 const WorldConfig& cfg) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path);
    for (const Scene& s : scenes) os << scene_to_json(s, cfg).dump() << '\n';
    if (!os) throw DataError("write failed: " + path);
}

std::vector<Scene> load_scenes(const std::string& path, const WorldConfig& cfg) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open dataset: " + path);
    std::vector<Scene> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(scene_from_json(row, cfg, path + ":" + std::to_string(lineno)));
    }
    return out;
}

DatasetCounts make_dataset(const WorldConfig& cfg, std::size_t n_scenes,
                           const std::string& out_dir) {
    cfg.validate();
    if (n_scenes == 0) throw ConfigError("make_dataset: n_scenes must be positive");
    std::filesystem::create_directories(out_dir);
    const auto open = [&](const char* name) {
        std::ofstream os(out_dir + "/" + name, std::ios::trunc);
        if (!os) throw DataError(std::string("cannot open for writing: ") + out_dir + "/" + name);
        return os;
    };
    auto train = open("train.jsonl");
    auto val = open("val.jsonl");
    auto test = open("test.jsonl");

    DatasetCounts counts;
    std::vector<std::size_t> phrase_counts(cfg.phrases.size(), 0);
    std::size_t train_edges = 0;
    for (std::uint64_t id = 0; id < n_scenes; ++id) {
        const Scene s = sample_scene(cfg, id);
        const json row = scene_to_json(s, cfg);
        switch (split_of(id)) {
            case Split::train:
                train << row.dump() << '\n';
                ++counts.train;
                for (int p : s.rel_phrases) ++phrase_counts[static_cast<std::size_t>(p)];
                train_edges += s.rel_phrases.size();
                break;
            case Split::val:
                val << row.dump() << '\n';
                ++counts.val;
                break;
            case Split::test:
                test << row.dump() << '\n';
                ++counts.test;
                break;
        }
    }
    json marginals;
    for (std::size_t p = 0; p < cfg.phrases.size(); ++p)
        marginals[cfg.phrases[p]] =
            train_edges ? static_cast<double>(phrase_counts[p]) / train_edges : 0.0;
    std::ofstream mos(out_dir + "/marginals.json", std::ios::trunc);
    mos << marginals.dump(2) << '\n';
    if (!mos) throw DataError("write failed: " + out_dir + "/marginals.json");
    save_world_config(out_dir + "/world.txt", cfg);
    return counts;
}

void save_world_config(const std::string& path, const WorldConfig& cfg) {
    std::string phrases;
    for (const std::string& p : cfg.phrases) {
        if (p.find(',') != std::string::npos)
            throw ConfigError("save_world_config: phrase contains a comma: " + p);
        if (!phrases.empty()) phrases += ',';
        phrases += p;
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path);
    char buf[128];
    const auto put_f = [&](const char* key, double v) {
        std::snprintf(buf, sizeof buf, "%s = %.17g\n", key, v);
        os << buf;
    };
    os << "seed = " << cfg.seed << '\n';
    os << "n_min = " << cfg.n_min << '\n';
    os << "n_max = " << cfg.n_max << '\n';
    os << "k_classes = " << cfg.k_classes << '\n';
    os << "phrases = " << phrases << '\n';
    put_f("min_side", cfg.min_side);
    put_f("max_side", cfg.max_side);
    put_f("near_dist", cfg.near_dist);
    put_f("label_flip", cfg.label_flip);
    put_f("box_jitter", cfg.box_jitter);
    put_f("context_noise", cfg.context_noise);
    put_f("appearance_jitter", cfg.appearance_jitter);
    os << "d_app = " << cfg.d_app << '\n';
    os << "d_ctx = " << cfg.d_ctx << '\n';
    if (!os) throw DataError("write failed: " + path);
}

namespace {

std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

WorldConfig load_world_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open world config: " + path);
    WorldConfig cfg;
    const auto parse_u = [&](const std::string& v, const std::string& key) -> std::uint64_t {
        std::size_t pos = 0;
        unsigned long long out = 0;
        try {
            out = std::stoull(v, &pos);
        } catch (const std::exception&) {
            throw DataError(path + ": bad value for " + key);
        }
        if (pos != v.size()) throw DataError(path + ": bad value for " + key);
        return out;
    };
    const auto parse_f = [&](const std::string& v, const std::string& key) -> double {
        char* end = nullptr;
        const double out = std::strtod(v.c_str(), &end);
        if (end == v.c_str() || *end != '\0')
            throw DataError(path + ": bad value for " + key);
        return out;
    };
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string row = strip(line);
        if (row.empty()) continue;
        const auto eq = row.find('=');
        if (eq == std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = strip(row.substr(0, eq));
        const std::string val = strip(row.substr(eq + 1));
        if (key == "seed") cfg.seed = parse_u(val, key);
        else if (key == "n_min") cfg.n_min = parse_u(val, key);
        else if (key == "n_max") cfg.n_max = parse_u(val, key);
        else if (key == "k_classes") cfg.k_classes = static_cast<int>(parse_u(val, key));
        else if (key == "phrases") {
            cfg.phrases.clear();
            std::size_t start = 0;
            while (start <= val.size()) {
                const auto comma = val.find(',', start);
                const std::string phrase = strip(
                    val.substr(start, comma == std::string::npos ? std::string::npos
                                                                 : comma - start));
                if (phrase.empty())
                    throw DataError(path + ": empty phrase in list");
                cfg.phrases.push_back(phrase);
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
        } else if (key == "min_side") cfg.min_side = parse_f(val, key);
        else if (key == "max_side") cfg.max_side = parse_f(val, key);
        else if (key == "near_dist") cfg.near_dist = parse_f(val, key);
        else if (key == "label_flip") cfg.label_flip = parse_f(val, key);
        else if (key == "box_jitter") cfg.box_jitter = parse_f(val, key);
        else if (key == "context_noise") cfg.context_noise = parse_f(val, key);
        else if (key == "appearance_jitter") cfg.appearance_jitter = parse_f(val, key);
        else if (key == "d_app") cfg.d_app = parse_u(val, key);
        else if (key == "d_ctx") cfg.d_ctx = parse_u(val, key);
        else throw DataError(path + ": unknown key " + key);
    }
    cfg.validate();
    return cfg;
}

std::map<std::string, double> load_marginals(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open marginals: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.items()) out[k] = v.get<double>();
    return out;
}

}  // namespace flowsg::world
