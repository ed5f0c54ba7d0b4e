#include "mcddpm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mcddpm/errors.hpp"

namespace mcddpm {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'C', 'D', 'D', 'P', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void require_little_endian() {
    if constexpr (std::endian::native != std::endian::little)
        throw checkpoint_error("checkpoint io requires a little-endian host");
}

json model_config_to_json(const ModelConfig& m) {
    return json{{"latent_channels", m.latent_channels},
                {"bridge_width", m.bridge_width},
                {"bridge_blocks", m.bridge_blocks},
                {"base_width", m.base_width},
                {"depth", m.depth},
                {"attention_heads", m.attention_heads},
                {"time_embed_dim", m.time_embed_dim},
                {"groups", m.groups},
                {"ablation", to_string(m.ablation)},
                {"share_context_encoder", m.share_context_encoder}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig m;
    m.latent_channels = j.at("latent_channels").get<int>();
    m.bridge_width = j.at("bridge_width").get<int>();
    m.bridge_blocks = j.at("bridge_blocks").get<int>();
    m.base_width = j.at("base_width").get<int>();
    m.depth = j.at("depth").get<int>();
    m.attention_heads = j.at("attention_heads").get<int>();
    m.time_embed_dim = j.at("time_embed_dim").get<int>();
    m.groups = j.at("groups").get<int>();
    m.ablation = parse_ablation(j.at("ablation").get<std::string>());
    m.share_context_encoder = j.at("share_context_encoder").get<bool>();
    return m;
}

struct ArrayRef {
    std::string name;
    std::vector<int> shape;
    const float* data;
    std::size_t count;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelF& model,
                     const CheckpointMeta& meta, const nn::Adam<float>* adam) {
    require_little_endian();
    const auto& store = model.params();

    std::vector<ArrayRef> arrays;
    for (int i = 0; i < store.size(); ++i) {
        const auto& e = store.entry(i);
        arrays.push_back({e.name, e.value.shape, e.value.data.data(), e.value.numel()});
    }
    if (adam) {
        for (int i = 0; i < store.size(); ++i) {
            const auto& e = store.entry(i);
            arrays.push_back({"adam.m." + e.name, e.value.shape, adam->moment1(i).data.data(),
                              e.value.numel()});
            arrays.push_back({"adam.v." + e.name, e.value.shape, adam->moment2(i).data.data(),
                              e.value.numel()});
        }
    }

    json header;
    header["format"] = kVersion;
    header["epoch"] = meta.epoch;
    header["val_error"] = meta.val_error;
    header["config"] = model_config_to_json(meta.model);
    header["config_snapshot"] = meta.config_snapshot;
    header["schedule"] = {{"T", meta.T}, {"beta_start", meta.beta_start}, {"beta_end", meta.beta_end}};
    header["adam_step"] = adam ? adam->step_count() : -1;
    json index = json::array();
    std::uint64_t offset = 0;
    for (const auto& a : arrays) {
        index.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                         {"count", a.count}, {"dtype", "f32le"}});
        offset += a.count * sizeof(float);
    }
    header["arrays"] = index;
    const std::string hdr = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw checkpoint_error("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t ver = kVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hlen = hdr.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    for (const auto& a : arrays)
        out.write(reinterpret_cast<const char*>(a.data),
                  static_cast<std::streamsize>(a.count * sizeof(float)));
    if (!out) throw checkpoint_error("short write on checkpoint: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    require_little_endian();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw checkpoint_error("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw checkpoint_error("not a checkpoint file: " + path.string());
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kVersion)
        throw checkpoint_error("unsupported checkpoint version " + std::to_string(ver));
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hdr(hlen, '\0');
    in.read(hdr.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw checkpoint_error("truncated checkpoint header: " + path.string());

    json header;
    try {
        header = json::parse(hdr);
    } catch (const json::exception& e) {
        throw checkpoint_error(std::string("malformed checkpoint header: ") + e.what());
    }

    LoadedCheckpoint lc;
    lc.meta.model = model_config_from_json(header.at("config"));
    lc.meta.config_snapshot = header.value("config_snapshot", "");
    lc.meta.epoch = header.at("epoch").get<int>();
    lc.meta.val_error = header.at("val_error").get<double>();
    lc.meta.T = header.at("schedule").at("T").get<int>();
    lc.meta.beta_start = header.at("schedule").at("beta_start").get<double>();
    lc.meta.beta_end = header.at("schedule").at("beta_end").get<double>();

    lc.model = std::make_unique<ModelF>(lc.meta.model);
    auto& store = lc.model->params();

    const long adam_step = header.at("adam_step").get<long>();
    if (adam_step >= 0) {
        lc.adam = std::make_unique<nn::Adam<float>>();
        lc.adam->attach(store);
        lc.adam->set_step_count(adam_step);
    }

    const std::streampos payload_base = in.tellg();
    for (const auto& a : header.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        const std::uint64_t offset = a.at("offset").get<std::uint64_t>();
        const std::size_t count = a.at("count").get<std::size_t>();
        Tensor<float>* dst = nullptr;
        if (name.rfind("adam.m.", 0) == 0) {
            if (!lc.adam) continue;
            const int idx = store.find(name.substr(7));
            if (idx < 0) throw checkpoint_error("unknown optimizer array: " + name);
            dst = &lc.adam->moment1(idx);
        } else if (name.rfind("adam.v.", 0) == 0) {
            if (!lc.adam) continue;
            const int idx = store.find(name.substr(7));
            if (idx < 0) throw checkpoint_error("unknown optimizer array: " + name);
            dst = &lc.adam->moment2(idx);
        } else {
            const int idx = store.find(name);
            if (idx < 0) throw checkpoint_error("unknown parameter in checkpoint: " + name);
            dst = &store.entry(idx).value;
        }
        if (dst->numel() != count)
            throw checkpoint_error("shape mismatch for array " + name + ": expected " +
                                   std::to_string(dst->numel()) + " values, file has " +
                                   std::to_string(count));
        in.seekg(payload_base + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(dst->data.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) throw checkpoint_error("truncated checkpoint payload at array " + name);
    }
    return lc;
}

void apply_params(ModelF& model, const std::vector<Tensor<float>>& params) {
    auto& store = model.params();
    if (static_cast<int>(params.size()) != store.size())
        throw std::invalid_argument("apply_params: parameter count mismatch");
    for (int i = 0; i < store.size(); ++i) {
        auto& e = store.entry(i);
        if (params[static_cast<std::size_t>(i)].shape != e.value.shape)
            throw std::invalid_argument("apply_params: shape mismatch at " + e.name);
        e.value = params[static_cast<std::size_t>(i)];
    }
}

}  // namespace mcddpm
