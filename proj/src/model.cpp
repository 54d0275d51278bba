#include "aerosense/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace aero {

void ModelConfig::validate() const {
    if (n_max < 1) throw InvalidConfig("n_max must be at least 1");
    if (d_in < 1) throw InvalidConfig("d_in must be at least 1");
    if (encoder_layers.empty()) throw InvalidConfig("encoder needs at least one layer");
    if (encoder_layers.back() != d_model) {
        throw InvalidConfig("last encoder layer width must equal d_model");
    }
    if (attention_heads < 1 || d_model % attention_heads != 0) {
        throw InvalidConfig("d_model must be divisible by attention_heads");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidConfig("dropout_p must be in [0, 1)");
    if (head_hidden < 1) throw InvalidConfig("head_hidden must be at least 1");
}

Tensor attention_mask_for(int64_t rows, int64_t valid_count) {
    Tensor mask = Tensor::zeros({rows, rows});
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < rows; ++j) {
            if (i >= valid_count || j >= valid_count) mask.at(i, j) = kMaskNegInf;
        }
    }
    return mask;
}

PaddedBatch pad_to_container(const Tensor& states, const ModelConfig& config) {
    const int64_t n_valid = states.rows();
    if (n_valid > config.n_max) {
        throw CapacityExceeded("situation holds " + std::to_string(n_valid) +
                               " aircraft but the container capacity is " +
                               std::to_string(config.n_max) +
                               "; raise n_max and retrain");
    }
    if (n_valid > 0 && states.cols() != config.d_in) {
        throw ShapeMismatch("state rows must have d_in columns");
    }
    PaddedBatch batch;
    batch.valid_count = n_valid;
    batch.x = Tensor::zeros({config.n_max, config.d_in});
    std::copy(states.data.begin(), states.data.end(), batch.x.data.begin());
    batch.filter.assign(size_t(config.n_max), 0.0);
    for (int64_t i = 0; i < n_valid; ++i) batch.filter[size_t(i)] = 1.0;
    batch.attention_mask = attention_mask_for(config.n_max, n_valid);
    return batch;
}

namespace {

Tensor init_tensor(std::mt19937_64& rng, int64_t rows, int64_t cols, double stddev) {
    std::normal_distribution<double> nd(0.0, stddev);
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = nd(rng);
    return t;
}

} // namespace

ModelCheckpoint init_checkpoint(const ModelConfig& config, const FeatureConfig& feat,
                                const Normalizer& norm, const std::string& geometry_fp,
                                uint64_t seed) {
    config.validate();
    if (feature_dim(feat) != config.d_in) {
        throw InvalidConfig("feature config dimensionality does not match d_in");
    }
    ModelCheckpoint ckpt;
    ckpt.config = config;
    ckpt.feature_config = feat;
    ckpt.normalizer = norm;
    ckpt.geometry_fingerprint = geometry_fp;

    std::mt19937_64 rng(seed);
    int64_t prev = config.d_in;
    for (size_t l = 0; l < config.encoder_layers.size(); ++l) {
        const int64_t width = config.encoder_layers[l];
        const std::string name = "enc" + std::to_string(l);
        ckpt.params[name + ".w"] = init_tensor(rng, prev, width, std::sqrt(2.0 / double(prev)));
        ckpt.params[name + ".b"] = Tensor::zeros({1, width});
        ckpt.params[name + ".bn_gamma"] = Tensor::full({1, width}, 1.0);
        ckpt.params[name + ".bn_beta"] = Tensor::zeros({1, width});
        BatchNormState st;
        st.running_mean = Tensor::zeros({1, width});
        st.running_var = Tensor::full({1, width}, 1.0);
        ckpt.bn[name] = std::move(st);
        prev = width;
    }
    if (config.attention_enabled) {
        const int64_t dk = config.d_model / config.attention_heads;
        const double glorot = std::sqrt(2.0 / double(config.d_model + dk));
        for (int64_t h = 0; h < config.attention_heads; ++h) {
            const std::string name = "attn.h" + std::to_string(h);
            ckpt.params[name + ".wq"] = init_tensor(rng, config.d_model, dk, glorot);
            ckpt.params[name + ".wk"] = init_tensor(rng, config.d_model, dk, glorot);
            ckpt.params[name + ".wv"] = init_tensor(rng, config.d_model, dk, glorot);
        }
        ckpt.params["attn.wo"] =
            init_tensor(rng, config.d_model, config.d_model,
                        std::sqrt(2.0 / double(2 * config.d_model)));
        ckpt.params["attn.bo"] = Tensor::zeros({1, config.d_model});
    }
    const double head_in = std::sqrt(2.0 / double(config.d_model));
    const double head_out = std::sqrt(2.0 / double(config.head_hidden + 1));
    if (config.decoupled_heads) {
        for (const char* name : {"head_ap", "head_ar"}) {
            ckpt.params[std::string(name) + ".w1"] =
                init_tensor(rng, config.d_model, config.head_hidden, head_in);
            ckpt.params[std::string(name) + ".b1"] = Tensor::zeros({1, config.head_hidden});
            ckpt.params[std::string(name) + ".w2"] =
                init_tensor(rng, config.head_hidden, 1, head_out);
            ckpt.params[std::string(name) + ".b2"] = Tensor::zeros({1, 1});
        }
    } else {
        ckpt.params["head.w1"] = init_tensor(rng, config.d_model, config.head_hidden, head_in);
        ckpt.params["head.b1"] = Tensor::zeros({1, config.head_hidden});
        ckpt.params["head.w2"] = init_tensor(rng, config.head_hidden, 2, head_out);
        ckpt.params["head.b2"] = Tensor::zeros({1, 2});
    }
    return ckpt;
}

namespace {

int param_node(Graph& g, const ModelCheckpoint& ckpt, const std::string& name,
               std::map<std::string, int>* ids) {
    const auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw InvalidConfig("checkpoint is missing parameter " + name);
    const int id = g.leaf(it->second);
    if (ids != nullptr) (*ids)[name] = id;
    return id;
}

} // namespace

ForwardGraph build_forward(Graph& g, const Tensor& state_rows, int64_t valid_count,
                           const ModelCheckpoint& ckpt, const ForwardOptions& opts) {
    return build_forward_traced(g, state_rows, valid_count, ckpt, opts, nullptr);
}

ForwardGraph build_forward_traced(Graph& g, const Tensor& state_rows, int64_t valid_count,
                                  const ModelCheckpoint& ckpt, const ForwardOptions& opts,
                                  std::map<std::string, int>* param_ids) {
    const ModelConfig& cfg = ckpt.config;
    const int64_t rows = state_rows.rows();

    ForwardGraph fg;
    fg.valid_count = valid_count;
    fg.filter.assign(size_t(rows), 0.0);
    for (int64_t i = 0; i < std::min(valid_count, rows); ++i) fg.filter[size_t(i)] = 1.0;
    const Tensor mask = attention_mask_for(rows, valid_count);

    fg.input = g.leaf(state_rows);

    // shared MLP encoder: Dropout(ReLU(BN(W h + b)))
    int h = fg.input;
    for (size_t l = 0; l < cfg.encoder_layers.size(); ++l) {
        const std::string name = "enc" + std::to_string(l);
        const int w = param_node(g, ckpt, name + ".w", param_ids);
        const int b = param_node(g, ckpt, name + ".b", param_ids);
        const int gamma = param_node(g, ckpt, name + ".bn_gamma", param_ids);
        const int beta = param_node(g, ckpt, name + ".bn_beta", param_ids);
        const int lin = g.add_rowvec(g.matmul(h, w), b);
        BatchNormBatchStats stats;
        const int bn = g.batchnorm(lin, gamma, beta, ckpt.bn.at(name), opts.training, fg.filter,
                                   opts.training ? &stats : nullptr);
        if (opts.training) fg.bn_stats.push_back(std::move(stats));
        const int act = g.relu(bn);
        h = g.dropout(act, cfg.dropout_p, opts.training,
                      opts.dropout_seed * 1315423911ull + 0x9e3779b97f4a7c15ull * (l + 1));
    }

    // masked multi-head self-attention over the aircraft set
    int e_out = h;
    if (cfg.attention_enabled) {
        const int64_t dk = cfg.d_model / cfg.attention_heads;
        const double inv_sqrt_dk = 1.0 / std::sqrt(double(dk));
        std::vector<int> head_outputs;
        for (int64_t head = 0; head < cfg.attention_heads; ++head) {
            const std::string name = "attn.h" + std::to_string(head);
            const int q = g.matmul(h, param_node(g, ckpt, name + ".wq", param_ids));
            const int k = g.matmul(h, param_node(g, ckpt, name + ".wk", param_ids));
            const int v = g.matmul(h, param_node(g, ckpt, name + ".wv", param_ids));
            const int scores = g.scale(g.matmul_nt(q, k), inv_sqrt_dk);
            const int weights = g.masked_softmax(scores, mask);
            fg.head_attention.push_back(weights);
            head_outputs.push_back(g.attn_apply(weights, v, mask));
        }
        const int concat = g.concat_cols(head_outputs);
        const int projected = g.add_rowvec(g.matmul(concat, param_node(g, ckpt, "attn.wo", param_ids)),
                                           param_node(g, ckpt, "attn.bo", param_ids));
        e_out = cfg.residual_attention ? g.add(projected, h) : projected;
    }
    fg.embeddings = e_out;

    fg.pooled = g.pool_rows(e_out, fg.filter, cfg.pooling);

    auto mlp_head = [&](const std::string& name) {
        const int h1 = g.relu(g.add_rowvec(
            g.matmul(fg.pooled, param_node(g, ckpt, name + ".w1", param_ids)),
            param_node(g, ckpt, name + ".b1", param_ids)));
        return g.add_rowvec(g.matmul(h1, param_node(g, ckpt, name + ".w2", param_ids)),
                            param_node(g, ckpt, name + ".b2", param_ids));
    };
    if (cfg.decoupled_heads) {
        const int y_ap = mlp_head("head_ap");
        const int y_ar = mlp_head("head_ar");
        fg.prediction = g.concat_cols({y_ap, y_ar});
    } else {
        fg.prediction = mlp_head("head");
    }
    return fg;
}

ForwardResult forward(const ModelCheckpoint& ckpt, const AirspaceSituation& situation,
                      const ForwardOptions& opts) {
    const Tensor states = feature_matrix(situation, ckpt.normalizer, ckpt.feature_config);
    const int64_t n_valid = states.rows();
    Graph g;
    ForwardGraph fg;
    if (opts.container) {
        const PaddedBatch batch = pad_to_container(states, ckpt.config);
        fg = build_forward(g, batch.x, batch.valid_count, ckpt, opts);
    } else {
        if (n_valid > ckpt.config.n_max) {
            throw CapacityExceeded("situation holds " + std::to_string(n_valid) +
                                   " aircraft but the container capacity is " +
                                   std::to_string(ckpt.config.n_max));
        }
        fg = build_forward(g, states, n_valid, ckpt, opts);
    }

    ForwardResult out;
    out.valid_count = n_valid;
    out.y_ap = g.value(fg.prediction).at(0, 0);
    out.y_ar = g.value(fg.prediction).at(0, 1);
    if (opts.want_diagnostics) {
        if (!fg.head_attention.empty() && n_valid > 0) {
            out.attention = Tensor::zeros({n_valid, n_valid});
            for (int w : fg.head_attention) {
                const Tensor& aw = g.value(w);
                for (int64_t i = 0; i < n_valid; ++i) {
                    for (int64_t j = 0; j < n_valid; ++j) {
                        out.attention.at(i, j) += aw.at(i, j);
                    }
                }
            }
            const double inv = 1.0 / double(fg.head_attention.size());
            for (double& v : out.attention.data) v *= inv;
        }
        if (n_valid > 0) {
            const Tensor& emb = g.value(fg.embeddings);
            out.embeddings = Tensor::zeros({n_valid, emb.cols()});
            std::copy(emb.data.begin(), emb.data.begin() + n_valid * emb.cols(),
                      out.embeddings.data.begin());
        }
    }
    return out;
}

void verify_geometry(const ModelCheckpoint& ckpt, const AirspaceGeometry& geometry) {
    const std::string fp = geometry_fingerprint(geometry);
    if (fp != ckpt.geometry_fingerprint) {
        throw GeometryMismatch("checkpoint was built against geometry " +
                               ckpt.geometry_fingerprint + " but the supplied geometry is " + fp);
    }
}

int64_t parameter_count(const ModelCheckpoint& ckpt) {
    int64_t n = 0;
    for (const auto& [name, t] : ckpt.params) n += t.numel();
    return n;
}

namespace {

nlohmann::json tensor_to_json(const Tensor& t) {
    return nlohmann::json{{"shape", t.shape}, {"data", t.data}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
    Tensor t;
    t.shape = j.at("shape").get<std::vector<int64_t>>();
    t.data = j.at("data").get<std::vector<double>>();
    if (int64_t(t.data.size()) != t.numel()) {
        throw InvalidConfig("tensor payload does not match its shape");
    }
    return t;
}

} // namespace

std::string checkpoint_to_json(const ModelCheckpoint& ckpt) {
    nlohmann::json j;
    j["format_version"] = ckpt.format_version;
    j["geometry_fingerprint"] = ckpt.geometry_fingerprint;
    j["config"] = {{"n_max", ckpt.config.n_max},
                   {"d_in", ckpt.config.d_in},
                   {"encoder_layers", ckpt.config.encoder_layers},
                   {"d_model", ckpt.config.d_model},
                   {"attention_heads", ckpt.config.attention_heads},
                   {"dropout_p", ckpt.config.dropout_p},
                   {"residual_attention", ckpt.config.residual_attention},
                   {"attention_enabled", ckpt.config.attention_enabled},
                   {"decoupled_heads", ckpt.config.decoupled_heads},
                   {"pooling", pooling_to_string(ckpt.config.pooling)},
                   {"head_hidden", ckpt.config.head_hidden}};
    j["feature_config"] = {{"tz_offset_s", ckpt.feature_config.tz_offset_s},
                           {"minimal_state", ckpt.feature_config.minimal_state},
                           {"circular_heading", ckpt.feature_config.circular_heading},
                           {"interior_zero_distance", ckpt.feature_config.interior_zero_distance}};
    j["normalizer"] = nlohmann::json::parse(normalizer_to_json(ckpt.normalizer));
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, t] : ckpt.params) params[name] = tensor_to_json(t);
    j["params"] = std::move(params);
    nlohmann::json bn = nlohmann::json::object();
    for (const auto& [name, st] : ckpt.bn) {
        bn[name] = {{"running_mean", tensor_to_json(st.running_mean)},
                    {"running_var", tensor_to_json(st.running_var)}};
    }
    j["bn"] = std::move(bn);
    return j.dump();
}

ModelCheckpoint checkpoint_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelCheckpoint ckpt;
    ckpt.format_version = j.at("format_version").get<int>();
    if (ckpt.format_version != 1) {
        throw InvalidConfig("unsupported checkpoint format_version " +
                            std::to_string(ckpt.format_version));
    }
    ckpt.geometry_fingerprint = j.at("geometry_fingerprint").get<std::string>();
    const auto& c = j.at("config");
    ckpt.config.n_max = c.at("n_max").get<int64_t>();
    ckpt.config.d_in = c.at("d_in").get<int64_t>();
    ckpt.config.encoder_layers = c.at("encoder_layers").get<std::vector<int64_t>>();
    ckpt.config.d_model = c.at("d_model").get<int64_t>();
    ckpt.config.attention_heads = c.at("attention_heads").get<int64_t>();
    ckpt.config.dropout_p = c.at("dropout_p").get<double>();
    ckpt.config.residual_attention = c.at("residual_attention").get<bool>();
    ckpt.config.attention_enabled = c.at("attention_enabled").get<bool>();
    ckpt.config.decoupled_heads = c.at("decoupled_heads").get<bool>();
    ckpt.config.pooling = pooling_from_string(c.at("pooling").get<std::string>());
    ckpt.config.head_hidden = c.at("head_hidden").get<int64_t>();
    const auto& f = j.at("feature_config");
    ckpt.feature_config.tz_offset_s = f.at("tz_offset_s").get<int64_t>();
    ckpt.feature_config.minimal_state = f.at("minimal_state").get<bool>();
    ckpt.feature_config.circular_heading = f.at("circular_heading").get<bool>();
    ckpt.feature_config.interior_zero_distance = f.at("interior_zero_distance").get<bool>();
    ckpt.normalizer = normalizer_from_json(j.at("normalizer").dump());
    for (const auto& [name, t] : j.at("params").items()) {
        ckpt.params[name] = tensor_from_json(t);
    }
    for (const auto& [name, st] : j.at("bn").items()) {
        BatchNormState s;
        s.running_mean = tensor_from_json(st.at("running_mean"));
        s.running_var = tensor_from_json(st.at("running_var"));
        ckpt.bn[name] = std::move(s);
    }
    ckpt.config.validate();
    return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidConfig("cannot write checkpoint file: " + path);
    out << checkpoint_to_json(ckpt) << "\n";
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidConfig("cannot open checkpoint file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_json(ss.str());
}

} // namespace aero
