#include "diffsed/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace diffsed {

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::DiffSed: return "diffsed";
        case Mode::DiffSedBB: return "diffsed-bb";
        case Mode::SedtBaseline: return "sedt-baseline";
    }
    throw std::logic_error("unreachable");
}

Mode mode_from_name(const std::string& name) {
    if (name == "diffsed") return Mode::DiffSed;
    if (name == "diffsed-bb") return Mode::DiffSedBB;
    if (name == "sedt-baseline") return Mode::SedtBaseline;
    throw std::invalid_argument("unknown mode: " + name);
}

std::string ModelConfig::arch_hash() const {
    std::ostringstream os;
    os << mode_name(mode) << "|mels:" << n_mels << "|conv:";
    for (size_t c : enc.conv_channels) os << c << ",";
    os << "|d:" << enc.d_model << "|el:" << enc.n_layers << "|eh:" << enc.n_heads
       << "|eff:" << enc.ff_dim << "|dl:" << dec.n_layers << "|dh:" << dec.n_heads
       << "|dff:" << dec.ff_dim << "|N:" << dec.n_queries << "|K:" << dec.n_classes;
    const std::string s = os.str();
    uint64_t h = 1469598103934665603ULL;   // FNV-1a
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream hex;
    hex << std::hex << h;
    return hex.str();
}

Tensor sinusoidal_positions(size_t length, size_t dim) {
    Tensor pe({length, dim});
    auto& d = pe.data();
    for (size_t pos = 0; pos < length; ++pos) {
        for (size_t i = 0; i < dim / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / dim);
            d[pos * dim + 2 * i] = std::sin(pos * freq);
            d[pos * dim + 2 * i + 1] = std::cos(pos * freq);
        }
    }
    return pe;
}

Tensor sinusoidal_timestep(size_t t, size_t dim) {
    Tensor e({1, dim});
    auto& d = e.data();
    for (size_t i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / dim);
        d[2 * i] = std::sin(t * freq);
        d[2 * i + 1] = std::cos(t * freq);
    }
    return e;
}

namespace {

Tensor xavier(size_t fan_in, size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::rand_uniform({fan_in, fan_out}, rng, -bound, bound);
}

void add_linear(ParamStore& ps, const std::string& prefix, size_t in, size_t out, Rng& rng) {
    ps.add(prefix + ".w", xavier(in, out, rng));
    ps.add(prefix + ".b", Tensor::zeros({out}));
}

void add_attention(ParamStore& ps, const std::string& prefix, size_t d, Rng& rng) {
    add_linear(ps, prefix + ".q", d, d, rng);
    add_linear(ps, prefix + ".k", d, d, rng);
    add_linear(ps, prefix + ".v", d, d, rng);
    add_linear(ps, prefix + ".o", d, d, rng);
}

void add_layer_norm(ParamStore& ps, const std::string& prefix, size_t d) {
    ps.add(prefix + ".g", Tensor::full({d}, 1.0));
    ps.add(prefix + ".b", Tensor::zeros({d}));
}

// conv output extent for kernel 3, stride 2, padding 1
size_t conv_out(size_t n) { return (n - 1) / 2 + 1; }

}  // namespace

DetectorModel DetectorModel::init(const ModelConfig& cfg, Rng& rng) {
    if (cfg.enc.d_model % cfg.enc.n_heads != 0)
        throw std::invalid_argument("encoder: d_model must be divisible by n_heads");
    if (cfg.enc.d_model % cfg.dec.n_heads != 0)
        throw std::invalid_argument("decoder: d_model must be divisible by n_heads");
    if (cfg.enc.conv_channels.empty())
        throw std::invalid_argument("encoder: at least one conv stage required");

    ParamStore ps;
    const size_t d = cfg.enc.d_model;

    size_t in_ch = 1;
    size_t f = cfg.n_mels;
    for (size_t i = 0; i < cfg.enc.conv_channels.size(); ++i) {
        const size_t out_ch = cfg.enc.conv_channels[i];
        add_linear(ps, "enc.conv" + std::to_string(i), 9 * in_ch, out_ch, rng);
        in_ch = out_ch;
        f = conv_out(f);
    }
    add_linear(ps, "enc.in_proj", f * in_ch, d, rng);
    for (size_t l = 0; l < cfg.enc.n_layers; ++l) {
        const std::string p = "enc.layer" + std::to_string(l);
        add_attention(ps, p + ".attn", d, rng);
        add_layer_norm(ps, p + ".norm1", d);
        add_linear(ps, p + ".ff1", d, cfg.enc.ff_dim, rng);
        add_linear(ps, p + ".ff2", cfg.enc.ff_dim, d, rng);
        add_layer_norm(ps, p + ".norm2", d);
    }

    for (size_t l = 0; l < cfg.dec.n_layers; ++l) {
        const std::string p = "dec.layer" + std::to_string(l);
        add_attention(ps, p + ".self", d, rng);
        add_layer_norm(ps, p + ".norm1", d);
        add_attention(ps, p + ".cross", d, rng);
        add_layer_norm(ps, p + ".norm2", d);
        add_linear(ps, p + ".ff1", d, cfg.dec.ff_dim, rng);
        add_linear(ps, p + ".ff2", cfg.dec.ff_dim, d, rng);
        add_layer_norm(ps, p + ".norm3", d);
    }

    add_linear(ps, "head.loc1", d, d, rng);
    add_linear(ps, "head.loc2", d, 2, rng);
    add_linear(ps, "head.cls", d, cfg.dec.n_classes + 1, rng);

    if (cfg.mode == Mode::DiffSed) add_linear(ps, "head.z0", d, d, rng);
    if (cfg.mode == Mode::DiffSed || cfg.mode == Mode::SedtBaseline)
        ps.add("queries.dict", Tensor::randn({cfg.dec.n_queries, d}, rng));
    if (cfg.mode == Mode::DiffSedBB) ps.add("queries.box_proj", xavier(2, d, rng));

    return DetectorModel(cfg, std::move(ps));
}

DetectorModel DetectorModel::from_params(const ModelConfig& cfg, ParamStore params) {
    return DetectorModel(cfg, std::move(params));
}

Tensor DetectorModel::linear(const Tensor& x, const std::string& prefix) const {
    return add(matmul(x, params_.at(prefix + ".w")), params_.at(prefix + ".b"));
}

Tensor DetectorModel::attention(const Tensor& x_q, const Tensor& x_kv, const std::string& prefix,
                                Rng* dropout_rng, bool training) const {
    const size_t d = cfg_.enc.d_model;
    const size_t h = (prefix.rfind("enc.", 0) == 0) ? cfg_.enc.n_heads : cfg_.dec.n_heads;
    const size_t dh = d / h;
    Tensor q = linear(x_q, prefix + ".q");
    Tensor k = linear(x_kv, prefix + ".k");
    Tensor v = linear(x_kv, prefix + ".v");
    std::vector<Tensor> heads;
    heads.reserve(h);
    const size_t sq = q.shape()[0], sk = k.shape()[0];
    for (size_t i = 0; i < h; ++i) {
        Tensor qh = slice(q, 0, sq, i * dh, (i + 1) * dh);
        Tensor kh = slice(k, 0, sk, i * dh, (i + 1) * dh);
        Tensor vh = slice(v, 0, sk, i * dh, (i + 1) * dh);
        Tensor scores = mul_scalar(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
        Tensor attn = softmax(scores, 1);
        heads.push_back(matmul(attn, vh));
    }
    Tensor out = linear(concat(heads, 1), prefix + ".o");
    if (dropout_rng) out = dropout(out, cfg_.enc.dropout, *dropout_rng, training);
    return out;
}

Tensor DetectorModel::feed_forward(const Tensor& x, const std::string& prefix, Rng* dropout_rng,
                                   bool training) const {
    Tensor h = relu(linear(x, prefix + ".ff1"));
    if (dropout_rng) h = dropout(h, cfg_.enc.dropout, *dropout_rng, training);
    return linear(h, prefix + ".ff2");
}

Tensor DetectorModel::encode(const MelSpectrogram& mel, Rng* dropout_rng, bool training) const {
    if (!mel.frames.all_finite()) throw std::invalid_argument("encode: non-finite mel input");
    const size_t d = cfg_.enc.d_model;

    // conv stack over (time, mel) with channels-last rows [H x (W*C)]
    Tensor x = mel.frames;
    size_t h = mel.n_frames(), w = mel.n_mels(), c = 1;
    for (size_t s = 0; s < cfg_.enc.conv_channels.size(); ++s) {
        const size_t oc = cfg_.enc.conv_channels[s];
        const size_t oh = conv_out(h), ow = conv_out(w);
        if (oh < 1 || ow < 1) throw std::invalid_argument("encode: conv output collapsed to zero");
        // im2col as a row gather over the zero-padded flattened input
        std::vector<int64_t> ids;
        ids.reserve(oh * ow * 9 * c);
        for (size_t y = 0; y < oh; ++y) {
            for (size_t xx = 0; xx < ow; ++xx) {
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const int64_t iy = static_cast<int64_t>(y) * 2 - 1 + ky;
                        const int64_t ix = static_cast<int64_t>(xx) * 2 - 1 + kx;
                        const bool ok = iy >= 0 && iy < static_cast<int64_t>(h) && ix >= 0 &&
                                        ix < static_cast<int64_t>(w);
                        for (size_t ch = 0; ch < c; ++ch)
                            ids.push_back(ok ? 1 + (iy * static_cast<int64_t>(w) + ix) *
                                                       static_cast<int64_t>(c) +
                                                   static_cast<int64_t>(ch)
                                             : 0);
                    }
                }
            }
        }
        Tensor flat = reshape(x, {h * w * c, 1});
        Tensor table = concat({Tensor::zeros({1, 1}), flat}, 0);
        Tensor patches = reshape(gather_rows(table, ids), {oh * ow, 9 * c});
        Tensor conv = relu(add(matmul(patches, params_.at("enc.conv" + std::to_string(s) + ".w")),
                               params_.at("enc.conv" + std::to_string(s) + ".b")));
        x = reshape(conv, {oh, ow * oc});
        h = oh;
        w = ow;
        c = oc;
    }

    // flatten mel axis into channels, project to D, add positions
    x = linear(x, "enc.in_proj");
    x = add(x, sinusoidal_positions(h, d));
    for (size_t l = 0; l < cfg_.enc.n_layers; ++l) {
        const std::string p = "enc.layer" + std::to_string(l);
        Tensor a = attention(x, x, p + ".attn", dropout_rng, training);
        x = layer_norm(add(x, a), params_.at(p + ".norm1.g"), params_.at(p + ".norm1.b"), 1e-5);
        Tensor f = feed_forward(x, p, dropout_rng, training);
        x = layer_norm(add(x, f), params_.at(p + ".norm2.g"), params_.at(p + ".norm2.b"), 1e-5);
    }
    return x;
}

Tensor DetectorModel::decode(const QuerySet& queries, const Tensor& c_a, Rng* dropout_rng,
                             bool training) const {
    const size_t d = cfg_.enc.d_model;
    if (queries.dim() != d || c_a.shape()[1] != d)
        throw std::invalid_argument("decode: query/feature width mismatch with d_model");
    Tensor x = queries.queries;
    if (queries.timestep) {
        if (!queries.scaled)
            throw std::invalid_argument("decode: timestepped queries must be scaled");
        x = add(x, reshape(sinusoidal_timestep(*queries.timestep, d), {d}));
    }
    for (size_t l = 0; l < cfg_.dec.n_layers; ++l) {
        const std::string p = "dec.layer" + std::to_string(l);
        Tensor a = attention(x, x, p + ".self", dropout_rng, training);
        x = layer_norm(add(x, a), params_.at(p + ".norm1.g"), params_.at(p + ".norm1.b"), 1e-5);
        Tensor cr = attention(x, c_a, p + ".cross", dropout_rng, training);
        x = layer_norm(add(x, cr), params_.at(p + ".norm2.g"), params_.at(p + ".norm2.b"), 1e-5);
        Tensor f = feed_forward(x, p, dropout_rng, training);
        x = layer_norm(add(x, f), params_.at(p + ".norm3.g"), params_.at(p + ".norm3.b"), 1e-5);
    }
    return x;
}

HeadOutputs DetectorModel::heads(const Tensor& f_d) const {
    const size_t n = f_d.shape()[0];
    HeadOutputs out;
    Tensor hidden = relu(linear(f_d, "head.loc1"));
    Tensor raw = sigmoid(linear(hidden, "head.loc2"));
    Tensor a = slice(raw, 0, n, 0, 1);
    Tensor b = slice(raw, 0, n, 1, 2);
    // canonical order: earlier sigmoid first
    out.bounds = concat({emin(a, b), emax(a, b)}, 1);
    out.class_logits = linear(f_d, "head.cls");
    out.class_probs = softmax(out.class_logits, 1);
    if (cfg_.mode == Mode::DiffSed) out.z0_hat = linear(f_d, "head.z0");
    return out;
}

QuerySet DetectorModel::dictionary_queries() const {
    QuerySet q;
    q.queries = params_.at("queries.dict");
    q.scaled = false;
    return q;
}

const Tensor& DetectorModel::box_projection() const { return params_.at("queries.box_proj"); }

HeadOutputs DetectorModel::sedt_baseline_forward(const MelSpectrogram& mel) const {
    Tensor c_a = encode(mel);
    return heads(decode(dictionary_queries(), c_a));
}

std::vector<EventProposal> HeadOutputs::to_proposals() const {
    const size_t n = bounds.shape()[0];
    const size_t kp1 = class_probs.shape()[1];
    std::vector<EventProposal> out(n);
    for (size_t i = 0; i < n; ++i) {
        auto& p = out[i];
        p.onset = bounds.at(i, 0);
        p.offset = bounds.at(i, 1);
        p.class_probs.resize(kp1);
        for (size_t k = 0; k < kp1; ++k) p.class_probs[k] = class_probs.at(i, k);
        p.score = 0.0;
        for (size_t k = 0; k + 1 < kp1; ++k) p.score = std::max(p.score, p.class_probs[k]);
    }
    return out;
}

}  // namespace diffsed
