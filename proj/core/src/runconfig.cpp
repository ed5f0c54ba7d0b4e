#include "mcddpm/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mcddpm/errors.hpp"

namespace mcddpm {

namespace {

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_patches(const std::vector<std::pair<int, int>>& ps) {
    std::string out;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(ps[i].first) + "x" + std::to_string(ps[i].second);
    }
    return out;
}

std::vector<std::pair<int, int>> parse_patches(const std::string& s) {
    std::vector<std::pair<int, int>> out;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find('x');
        if (x == std::string::npos)
            throw std::invalid_argument("patch_sizes: expected HxW entries, got '" + item + "'");
        out.emplace_back(std::stoi(item.substr(0, x)), std::stoi(item.substr(x + 1)));
    }
    if (out.empty()) throw std::invalid_argument("patch_sizes: empty list");
    return out;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw std::invalid_argument("expected boolean, got '" + s + "'");
}

}  // namespace

std::string RunConfig::to_key_value() const {
    std::map<std::string, std::string> kv;
    kv["T"] = std::to_string(train.T);
    kv["t_test"] = std::to_string(train.t_test);
    kv["lr"] = fmt_double(train.lr);
    kv["batch_size"] = std::to_string(train.batch_size);
    kv["max_epochs"] = std::to_string(train.max_epochs);
    kv["lambda"] = fmt_double(train.lambda);
    kv["p"] = std::to_string(train.p_norm);
    kv["seed"] = std::to_string(train.seed);
    kv["checkpoint_every"] = std::to_string(train.checkpoint_every);
    kv["validate_every"] = std::to_string(train.validate_every);
    kv["patch_sizes"] = fmt_patches(train.patch_sizes);
    kv["xz_at_max_t"] = train.xz_at_max_t ? "true" : "false";
    kv["stop_context_gradient"] = train.stop_context_gradient ? "true" : "false";
    kv["independent_latent_noise"] = train.independent_latent_noise ? "true" : "false";
    kv["repeats"] = std::to_string(train.repeats);
    kv["threads"] = std::to_string(train.threads);
    kv["ablation"] = to_string(model.ablation);
    kv["latent_channels"] = std::to_string(model.latent_channels);
    kv["bridge_width"] = std::to_string(model.bridge_width);
    kv["bridge_blocks"] = std::to_string(model.bridge_blocks);
    kv["base_width"] = std::to_string(model.base_width);
    kv["depth"] = std::to_string(model.depth);
    kv["heads"] = std::to_string(model.attention_heads);
    kv["time_embed_dim"] = std::to_string(model.time_embed_dim);
    kv["groups"] = std::to_string(model.groups);
    kv["share_context_encoder"] = model.share_context_encoder ? "true" : "false";
    kv["theta"] = fmt_double(static_cast<double>(post.theta));
    kv["median_kernel"] = std::to_string(post.median_kernel);
    kv["erosion_iterations"] = std::to_string(post.erosion_iterations);

    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) {
        try {
            if (k == "T") train.T = std::stoi(v);
            else if (k == "t_test") train.t_test = std::stoi(v);
            else if (k == "lr") train.lr = std::stod(v);
            else if (k == "batch_size") train.batch_size = std::stoi(v);
            else if (k == "max_epochs") train.max_epochs = std::stoi(v);
            else if (k == "lambda") train.lambda = std::stod(v);
            else if (k == "p") train.p_norm = std::stoi(v);
            else if (k == "seed") train.seed = std::stoull(v);
            else if (k == "checkpoint_every") train.checkpoint_every = std::stoi(v);
            else if (k == "validate_every") train.validate_every = std::stoi(v);
            else if (k == "patch_sizes") train.patch_sizes = parse_patches(v);
            else if (k == "xz_at_max_t") train.xz_at_max_t = parse_bool(v);
            else if (k == "stop_context_gradient") train.stop_context_gradient = parse_bool(v);
            else if (k == "independent_latent_noise") train.independent_latent_noise = parse_bool(v);
            else if (k == "repeats") train.repeats = std::stoi(v);
            else if (k == "threads") train.threads = std::stoi(v);
            else if (k == "ablation") model.ablation = parse_ablation(v);
            else if (k == "latent_channels") model.latent_channels = std::stoi(v);
            else if (k == "bridge_width") model.bridge_width = std::stoi(v);
            else if (k == "bridge_blocks") model.bridge_blocks = std::stoi(v);
            else if (k == "base_width") model.base_width = std::stoi(v);
            else if (k == "depth") model.depth = std::stoi(v);
            else if (k == "heads") model.attention_heads = std::stoi(v);
            else if (k == "time_embed_dim") model.time_embed_dim = std::stoi(v);
            else if (k == "groups") model.groups = std::stoi(v);
            else if (k == "share_context_encoder") model.share_context_encoder = parse_bool(v);
            else if (k == "theta") post.theta = std::stof(v);
            else if (k == "median_kernel") post.median_kernel = std::stoi(v);
            else if (k == "erosion_iterations") post.erosion_iterations = std::stoi(v);
            else throw std::invalid_argument("unknown config key: " + k);
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            throw std::invalid_argument("bad value for config key " + k + ": '" + v + "'");
        }
    }
}

RunConfig RunConfig::from_key_value(const std::map<std::string, std::string>& kv) {
    RunConfig cfg;
    cfg.apply(kv);
    return cfg;
}

std::map<std::string, std::string> parse_key_value_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line missing '=': " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open config file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_key_value_text(buffer.str());
}

}  // namespace mcddpm
