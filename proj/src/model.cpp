#include "kiwi/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace kiwi {

std::string ModelConfig::to_json() const {
    json j{
        {"enc",
         {{"dim", enc.dim}, {"depth", enc.depth}, {"heads", enc.heads},
          {"text_vocab", enc.text_vocab}, {"image_patch", enc.image_patch},
          {"max_sequence", enc.max_sequence}, {"dit_dim", enc.dit_dim},
          {"lora_rank", enc.lora_rank}, {"lora_alpha", enc.lora_alpha},
          {"lora_on_attention", enc.lora_on_attention}}},
        {"dit",
         {{"dim", dit.dim}, {"depth", dit.depth}, {"heads", dit.heads},
          {"pt", dit.pt}, {"ph", dit.ph}, {"pw", dit.pw},
          {"injection", dit::injection_mode_name(dit.injection)},
          {"reference_concat", dit.reference_concat},
          {"latent_channels", dit.latent_channels},
          {"codec_factor", dit.codec_factor},
          {"time_feat", dit.time_feat}}},
        {"codec_factor", codec_factor},
        {"init_seed", init_seed},
        {"use_latent_connector", use_latent_connector}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
    json j = json::parse(s);
    ModelConfig c;
    const json& e = j.at("enc");
    c.enc.dim = e.at("dim"); c.enc.depth = e.at("depth"); c.enc.heads = e.at("heads");
    c.enc.text_vocab = e.at("text_vocab"); c.enc.image_patch = e.at("image_patch");
    c.enc.max_sequence = e.at("max_sequence"); c.enc.dit_dim = e.at("dit_dim");
    c.enc.lora_rank = e.at("lora_rank"); c.enc.lora_alpha = e.at("lora_alpha");
    c.enc.lora_on_attention = e.at("lora_on_attention");
    const json& d = j.at("dit");
    c.dit.dim = d.at("dim"); c.dit.depth = d.at("depth"); c.dit.heads = d.at("heads");
    c.dit.pt = d.at("pt"); c.dit.ph = d.at("ph"); c.dit.pw = d.at("pw");
    c.dit.injection = dit::injection_mode_from_name(d.at("injection"));
    c.dit.reference_concat = d.at("reference_concat");
    c.dit.latent_channels = d.at("latent_channels");
    c.dit.codec_factor = d.at("codec_factor");
    c.dit.time_feat = d.at("time_feat");
    c.codec_factor = j.at("codec_factor");
    c.init_seed = j.at("init_seed");
    c.use_latent_connector = j.at("use_latent_connector");
    return c;
}

ModelConfig tiny_model_config(uint64_t seed) {
    ModelConfig c;
    c.init_seed = seed;
    c.codec_factor = 4;
    c.enc.dim = 32;
    c.enc.depth = 1;
    c.enc.heads = 2;
    c.enc.image_patch = 16;
    c.enc.dit_dim = 64;
    c.enc.lora_rank = 2;
    c.dit.dim = 64;
    c.dit.depth = 2;
    c.dit.heads = 4;
    c.dit.pt = 1; c.dit.ph = 4; c.dit.pw = 4;
    c.dit.latent_channels = 48;
    c.dit.codec_factor = 4;
    return c;
}

EditorModel::EditorModel(ModelConfig cfg) : cfg_(cfg) {
    if (cfg_.enc.dit_dim != cfg_.dit.dim)
        throw std::invalid_argument("connector output dim must equal DiT dim");
    if (cfg_.dit.latent_channels != 3 * cfg_.codec_factor * cfg_.codec_factor)
        throw std::invalid_argument("latent_channels must be 3*f^2");
    conditioner_ = std::make_unique<cond::Conditioner>(cfg_.enc, cfg_.init_seed, store_);
    dit_ = std::make_unique<dit::EditorDiT>(cfg_.dit, cfg_.init_seed, store_);
}

cond::QueryTask EditorModel::task_for(const SampleInputs& in) const {
    if (in.reference) return cond::QueryTask::Reference;
    if (in.source.shape()[0] == 1) return cond::QueryTask::Image;
    return cond::QueryTask::Video;
}

cond::ContextTokens EditorModel::context(const SampleInputs& in) const {
    return conditioner_->build_context(in.source, in.instruction, in.reference,
                                       task_for(in), cfg_.use_latent_connector);
}

cond::ContextTokens EditorModel::null_context() const {
    cond::ContextTokens ctx;
    ctx.data = ad::leaf(const_cast<ParamStore&>(store_).find("connectors", "null_context"));
    ctx.n_query = ctx.data->val.rows();
    ctx.n_ref = 0;
    return ctx;
}

ad::Var EditorModel::velocity(const codec::LatentVideo& z_t,
                              const codec::LatentVideo* source,
                              double t,
                              const cond::ContextTokens& ctx,
                              const std::optional<Tensor>& reference) const {
    return dit_->forward(z_t, source, t, ctx, reference);
}

// ---------------------------------------------------------------------------
// checkpoint I/O

namespace {
constexpr char kMagic[8] = {'K', 'I', 'W', 'I', 'C', 'K', 'P', '1'};
}

void save_checkpoint(const std::string& path, const EditorModel& model,
                     const std::vector<std::string>& lineage) {
    const ParamStore& store = model.store();
    json groups = json::array();
    int64_t total = 0;
    for (const std::string& g : store.group_names()) {
        json params = json::array();
        for (const Param* p : store.group_params(g)) {
            params.push_back({{"name", p->name},
                              {"shape", p->value.shape()},
                              {"trainable", p->trainable}});
            total += p->value.numel();
        }
        groups.push_back({{"name", g}, {"params", params}});
    }
    json header{{"config", json::parse(model.config().to_json())},
                {"lineage", lineage},
                {"groups", groups},
                {"total_values", total}};
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const std::string& g : store.group_names())
        for (const Param* p : store.group_params(g))
            out.write(reinterpret_cast<const char*>(p->value.data()),
                      static_cast<std::streamsize>(sizeof(double) * p->value.numel()));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

std::unique_ptr<EditorModel> load_checkpoint(const std::string& path,
                                             std::vector<std::string>* lineage) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);

    auto model = std::make_unique<EditorModel>(
        ModelConfig::from_json(header.at("config").dump()));
    if (lineage) *lineage = header.at("lineage").get<std::vector<std::string>>();

    ParamStore& store = model->store();
    for (const auto& gj : header.at("groups")) {
        const std::string g = gj.at("name");
        for (const auto& pj : gj.at("params")) {
            Param& p = store.find(g, pj.at("name"));
            const auto shape = pj.at("shape").get<std::vector<int64_t>>();
            if (shape != p.value.shape())
                throw std::runtime_error("checkpoint shape mismatch for " + g + "/" +
                                         std::string(pj.at("name")));
            in.read(reinterpret_cast<char*>(p.value.data()),
                    static_cast<std::streamsize>(sizeof(double) * p.value.numel()));
            p.trainable = pj.at("trainable");
        }
    }
    if (!in) throw std::runtime_error("checkpoint truncated: " + path);
    return model;
}

} // namespace kiwi
