#include "svdkl/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "svdkl/errors.hpp"

namespace svdkl::io {

namespace fs = std::filesystem;

namespace {

void require_object(const json& doc, const std::string& what) {
    if (!doc.is_object()) throw DataError(what + ": expected an object");
}

void reject_unknown(const json& doc, const std::set<std::string>& allowed, const std::string& what) {
    for (const auto& [key, _] : doc.items()) {
        if (!allowed.count(key)) throw DataError(what + ": unknown key '" + key + "'");
    }
}

const json& field(const json& doc, const char* key, const std::string& what) {
    auto it = doc.find(key);
    if (it == doc.end()) throw DataError(what + ": missing key '" + key + "'");
    return *it;
}

double number(const json& v, const std::string& what) {
    if (!v.is_number()) throw DataError(what + ": expected a number");
    return v.get<double>();
}

std::int64_t integer(const json& v, const std::string& what) {
    if (!v.is_number_integer()) throw DataError(what + ": expected an integer");
    return v.get<std::int64_t>();
}

Vector vector_from(const json& v, const std::string& what) {
    if (!v.is_array()) throw DataError(what + ": expected an array");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[static_cast<Eigen::Index>(i)] = number(v[i], what + "[" + std::to_string(i) + "]");
    }
    return out;
}

json vector_to(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

json matrix_row_major(const Matrix& m) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
    return arr;
}

Matrix matrix_from_row_major(const json& v, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    const Vector flat = vector_from(v, what);
    if (flat.size() != rows * cols) {
        throw DataError(what + ": expected " + std::to_string(rows * cols) + " values, got " +
                        std::to_string(flat.size()));
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = flat[i * cols + j];
    return m;
}

json nested_rows(const Matrix& m) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) arr.push_back(vector_to(m.row(i).transpose()));
    return arr;
}

Matrix matrix_from_nested(const json& v, Eigen::Index cols, const std::string& what) {
    if (!v.is_array()) throw DataError(what + ": expected an array of rows");
    Matrix m(static_cast<Eigen::Index>(v.size()), cols);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string row_name = what + " row " + std::to_string(i);
        if (!v[i].is_array() || static_cast<Eigen::Index>(v[i].size()) != cols) {
            throw DataError(row_name + " has " + std::to_string(v[i].is_array() ? v[i].size() : 0) +
                            " values, expected " + std::to_string(cols));
        }
        m.row(static_cast<Eigen::Index>(i)) = vector_from(v[i], row_name).transpose();
    }
    return m;
}

json f0_to_json(const std::optional<F0Stats>& s) {
    if (!s) return nullptr;
    return {{"mean_log_f0", s->mean_log_f0},
            {"std_log_f0", s->std_log_f0},
            {"voiced_frame_count", s->voiced_frame_count}};
}

std::optional<F0Stats> f0_from_json(const json& v, const std::string& what) {
    if (v.is_null()) return std::nullopt;
    require_object(v, what);
    reject_unknown(v, {"mean_log_f0", "std_log_f0", "voiced_frame_count"}, what);
    F0Stats s;
    s.mean_log_f0 = number(field(v, "mean_log_f0", what), what);
    s.std_log_f0 = number(field(v, "std_log_f0", what), what);
    s.voiced_frame_count = integer(field(v, "voiced_frame_count", what), what);
    return s;
}

const char* activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "linear"; }

Activation activation_from(const json& v, const std::string& what) {
    if (v == "relu") return Activation::kRelu;
    if (v == "linear") return Activation::kLinear;
    throw DataError(what + ": unknown activation");
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

json parse_document(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n');
        throw DataError(origin + ":" + std::to_string(line) + ": parse error: " + e.what());
    }
}

json read_document(const fs::path& path) { return parse_document(read_text(path), path.string()); }

void write_atomic(const fs::path& path, const std::string& contents) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << contents;
        if (!out) throw DataError("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

json utterance_to_json(const vc::Utterance& u) {
    json doc = {{"format", "vcfeat"},
                {"version", kUtteranceVersion},
                {"sample_rate_hz", u.sample_rate_hz},
                {"frame_period_ms", u.frame_period_ms},
                {"f0_hz", vector_to(u.f0_hz)},
                {"mcc", nested_rows(u.mcc)}};
    if (!u.aperiodicity.is_null()) doc["aperiodicity"] = u.aperiodicity;
    return doc;
}

vc::Utterance utterance_from_json(const json& doc) {
    const std::string what = "utterance";
    require_object(doc, what);
    reject_unknown(doc, {"format", "version", "sample_rate_hz", "frame_period_ms", "f0_hz", "mcc", "aperiodicity"},
                   what);
    if (field(doc, "format", what) != "vcfeat") throw DataError("utterance: format must be \"vcfeat\"");
    if (integer(field(doc, "version", what), "utterance version") != kUtteranceVersion) {
        throw DataError("utterance: unsupported version");
    }
    vc::Utterance u;
    const auto rate = integer(field(doc, "sample_rate_hz", what), "sample_rate_hz");
    if (rate <= 0) throw DataError("utterance: sample_rate_hz must be positive");
    u.sample_rate_hz = static_cast<int>(rate);
    u.frame_period_ms = number(field(doc, "frame_period_ms", what), "frame_period_ms");
    u.f0_hz = vector_from(field(doc, "f0_hz", what), "f0_hz");
    u.mcc = matrix_from_nested(field(doc, "mcc", what), vc::kMccWidth, "mcc");
    if (u.f0_hz.size() != u.mcc.rows()) {
        throw DataError("utterance: f0_hz has " + std::to_string(u.f0_hz.size()) + " frames but mcc has " +
                        std::to_string(u.mcc.rows()));
    }
    if (auto it = doc.find("aperiodicity"); it != doc.end()) u.aperiodicity = *it;
    try {
        u.validate();
    } catch (const InputError& e) {
        throw DataError(std::string("utterance: ") + e.what());
    }
    return u;
}

vc::Utterance load_utterance(const fs::path& path) {
    try {
        return utterance_from_json(read_document(path));
    } catch (const DataError& e) {
        const std::string msg = e.what();
        if (msg.rfind(path.string(), 0) == 0) throw;
        throw DataError(path.string() + ": " + msg);
    }
}

void save_utterance(const vc::Utterance& u, const fs::path& path) {
    write_atomic(path, utterance_to_json(u).dump() + "\n");
}

json checkpoint_to_json(const SvdklModel& model, const std::optional<TrainConfig>& cfg) {
    model.validate();
    json layers = json::array();
    for (const auto& layer : model.net.layers()) {
        layers.push_back({{"activation", activation_name(layer.activation)},
                          {"weight", matrix_row_major(layer.weight)},
                          {"bias", vector_to(layer.bias)}});
    }
    json heads = json::array();
    for (const auto& h : model.heads) {
        json lower = json::array();
        const auto& c = h.state.chol_cov;
        for (Eigen::Index i = 0; i < c.rows(); ++i)
            for (Eigen::Index j = 0; j <= i; ++j) lower.push_back(c(i, j));
        heads.push_back({{"inducing_count", h.state.size()},
                         {"inducing_inputs", matrix_row_major(h.state.inducing_inputs)},
                         {"mean", vector_to(h.state.mean)},
                         {"chol_cov_lower", lower},
                         {"log_noise_variance", h.log_noise_variance}});
    }
    json doc = {{"format", "svdkl-checkpoint"},
                {"format_version", kCheckpointVersion},
                {"warping_alpha", model.warping_alpha},
                {"jitter_base", model.jitter_base},
                {"layer_sizes", model.net.layer_sizes()},
                {"net_seed", model.net.rng_seed()},
                {"net", layers},
                {"kernel",
                 {{"log_signal_variance", model.kernel.log_signal_variance},
                  {"log_length_scales", vector_to(model.kernel.log_length_scales)}}},
                {"heads", heads},
                {"input_normalizer",
                 {{"mean", vector_to(model.input_normalizer.mean)},
                  {"scale", vector_to(model.input_normalizer.scale)}}},
                {"output_centers", vector_to(model.output_centers)},
                {"f0_source", f0_to_json(model.f0_source)},
                {"f0_target", f0_to_json(model.f0_target)},
                {"train_config", cfg ? config_to_json(*cfg) : json(nullptr)},
                {"seed", cfg ? json(cfg->seed) : json(nullptr)}};
    return doc;
}

SvdklModel checkpoint_from_json(const json& doc) {
    const std::string what = "checkpoint";
    require_object(doc, what);
    reject_unknown(doc,
                   {"format", "format_version", "warping_alpha", "jitter_base", "layer_sizes", "net_seed", "net",
                    "kernel", "heads", "input_normalizer", "output_centers", "f0_source", "f0_target",
                    "train_config", "seed"},
                   what);
    if (field(doc, "format", what) != "svdkl-checkpoint") throw DataError("checkpoint: wrong format tag");
    if (integer(field(doc, "format_version", what), "format_version") != kCheckpointVersion) {
        throw DataError("checkpoint: unsupported format_version");
    }
    SvdklModel model;
    model.warping_alpha = number(field(doc, "warping_alpha", what), "warping_alpha");
    model.jitter_base = number(field(doc, "jitter_base", what), "jitter_base");

    const json& sizes_doc = field(doc, "layer_sizes", what);
    if (!sizes_doc.is_array() || sizes_doc.size() < 2) throw DataError("checkpoint: bad layer_sizes");
    std::vector<Eigen::Index> sizes;
    for (const auto& s : sizes_doc) sizes.push_back(integer(s, "layer_sizes"));
    const json& net_doc = field(doc, "net", what);
    if (!net_doc.is_array() || net_doc.size() + 1 != sizes.size()) {
        throw DataError("checkpoint: net layer count does not match layer_sizes");
    }
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l < net_doc.size(); ++l) {
        const std::string lw = "net layer " + std::to_string(l);
        const json& ld = net_doc[l];
        require_object(ld, lw);
        reject_unknown(ld, {"activation", "weight", "bias"}, lw);
        DenseLayer layer;
        layer.activation = activation_from(field(ld, "activation", lw), lw);
        layer.weight = matrix_from_row_major(field(ld, "weight", lw), sizes[l + 1], sizes[l], lw + " weight");
        layer.bias = vector_from(field(ld, "bias", lw), lw + " bias");
        if (layer.bias.size() != sizes[l + 1]) throw DataError(lw + ": bias length mismatch");
        layers.push_back(std::move(layer));
    }
    const auto net_seed = field(doc, "net_seed", what);
    if (!net_seed.is_number_unsigned() && !net_seed.is_number_integer()) throw DataError("checkpoint: bad net_seed");
    try {
        model.net = FeedForwardNet(std::move(layers), net_seed.get<std::uint64_t>());
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
    const Eigen::Index q = model.net.output_dim();

    const json& kd = field(doc, "kernel", what);
    require_object(kd, "kernel");
    reject_unknown(kd, {"log_signal_variance", "log_length_scales"}, "kernel");
    model.kernel.log_signal_variance = number(field(kd, "log_signal_variance", "kernel"), "kernel");
    model.kernel.log_length_scales = vector_from(field(kd, "log_length_scales", "kernel"), "log_length_scales");

    const json& heads_doc = field(doc, "heads", what);
    if (!heads_doc.is_array() || heads_doc.empty()) throw DataError("checkpoint: heads must be a non-empty array");
    for (std::size_t d = 0; d < heads_doc.size(); ++d) {
        const std::string hw = "head " + std::to_string(d);
        const json& hd = heads_doc[d];
        require_object(hd, hw);
        reject_unknown(hd, {"inducing_count", "inducing_inputs", "mean", "chol_cov_lower", "log_noise_variance"}, hw);
        const Eigen::Index m = integer(field(hd, "inducing_count", hw), hw + " inducing_count");
        if (m < 1) throw DataError(hw + ": inducing_count must be >= 1");
        SvgpHead head;
        head.state.inducing_inputs = matrix_from_row_major(field(hd, "inducing_inputs", hw), m, q, hw + " Z");
        head.state.mean = vector_from(field(hd, "mean", hw), hw + " mean");
        const Vector lower = vector_from(field(hd, "chol_cov_lower", hw), hw + " chol_cov_lower");
        if (lower.size() != m * (m + 1) / 2) throw DataError(hw + ": chol_cov_lower has wrong length");
        head.state.chol_cov = Matrix::Zero(m, m);
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j <= i; ++j) head.state.chol_cov(i, j) = lower[k++];
        head.log_noise_variance = number(field(hd, "log_noise_variance", hw), hw + " noise");
        model.heads.push_back(std::move(head));
    }

    const json& nd = field(doc, "input_normalizer", what);
    require_object(nd, "input_normalizer");
    reject_unknown(nd, {"mean", "scale"}, "input_normalizer");
    model.input_normalizer.mean = vector_from(field(nd, "mean", "input_normalizer"), "input_normalizer mean");
    model.input_normalizer.scale = vector_from(field(nd, "scale", "input_normalizer"), "input_normalizer scale");
    model.output_centers = vector_from(field(doc, "output_centers", what), "output_centers");
    model.f0_source = f0_from_json(field(doc, "f0_source", what), "f0_source");
    model.f0_target = f0_from_json(field(doc, "f0_target", what), "f0_target");
    if (const json& cd = field(doc, "train_config", what); !cd.is_null()) (void)config_from_json(cd);

    try {
        model.validate();
    } catch (const Error& e) {
        throw DataError(std::string("checkpoint is inconsistent: ") + e.what());
    }
    return model;
}

void save_checkpoint(const SvdklModel& model, const fs::path& path, const std::optional<TrainConfig>& cfg) {
    write_atomic(path, checkpoint_to_json(model, cfg).dump() + "\n");
}

SvdklModel load_checkpoint(const fs::path& path) {
    return checkpoint_from_json(read_document(path));
}

json corpus_to_json(const AlignedCorpus& corpus) {
    json prov = json::array();
    for (const auto& p : corpus.provenance) prov.push_back({p.utterance_id, p.source_frame, p.target_frame});
    return {{"format", "vcalign"},
            {"version", kCorpusVersion},
            {"x", nested_rows(corpus.x)},
            {"y", nested_rows(corpus.y)},
            {"provenance", prov},
            {"f0_source", f0_to_json(corpus.f0_source)},
            {"f0_target", f0_to_json(corpus.f0_target)}};
}

AlignedCorpus corpus_from_json(const json& doc) {
    const std::string what = "aligned corpus";
    require_object(doc, what);
    reject_unknown(doc, {"format", "version", "x", "y", "provenance", "f0_source", "f0_target"}, what);
    if (field(doc, "format", what) != "vcalign") throw DataError("aligned corpus: format must be \"vcalign\"");
    if (integer(field(doc, "version", what), "version") != kCorpusVersion) {
        throw DataError("aligned corpus: unsupported version");
    }
    AlignedCorpus c;
    const json& xd = field(doc, "x", what);
    const Eigen::Index cols = (xd.is_array() && !xd.empty() && xd[0].is_array())
                                  ? static_cast<Eigen::Index>(xd[0].size())
                                  : vc::kMccOrder;
    c.x = matrix_from_nested(xd, cols, "x");
    const json& yd = field(doc, "y", what);
    const Eigen::Index ycols = (yd.is_array() && !yd.empty() && yd[0].is_array())
                                   ? static_cast<Eigen::Index>(yd[0].size())
                                   : vc::kMccOrder;
    c.y = matrix_from_nested(yd, ycols, "y");
    if (c.x.rows() != c.y.rows()) throw DataError("aligned corpus: x and y row counts differ");
    const json& pd = field(doc, "provenance", what);
    if (!pd.is_array()) throw DataError("aligned corpus: provenance must be an array");
    for (const auto& p : pd) {
        if (!p.is_array() || p.size() != 3 || !p[0].is_string()) throw DataError("aligned corpus: bad provenance entry");
        c.provenance.push_back({p[0].get<std::string>(), integer(p[1], "provenance"), integer(p[2], "provenance")});
    }
    c.f0_source = f0_from_json(field(doc, "f0_source", what), "f0_source");
    c.f0_target = f0_from_json(field(doc, "f0_target", what), "f0_target");
    return c;
}

void save_corpus(const AlignedCorpus& corpus, const fs::path& path) {
    write_atomic(path, corpus_to_json(corpus).dump() + "\n");
}

AlignedCorpus load_corpus(const fs::path& path) { return corpus_from_json(read_document(path)); }

json config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"step_size", c.step_size},
            {"net_step_size", c.net_step_size},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_epsilon", c.adam_epsilon},
            {"inducing_count", c.inducing_count},
            {"layer_sizes", c.layer_sizes},
            {"pretrain_epochs", c.pretrain_epochs},
            {"pretrain_step_size", c.pretrain_step_size},
            {"jitter_base", c.jitter_base},
            {"seed", c.seed},
            {"shared_inducing", c.shared_inducing},
            {"deep_kernel", c.deep_kernel},
            {"log_full_elbo", c.log_full_elbo},
            {"warping_alpha", c.warping_alpha}};
}

TrainConfig config_from_json(const json& doc) {
    const std::string what = "config";
    require_object(doc, what);
    TrainConfig c;
    for (const auto& [key, v] : doc.items()) {
        const std::string kw = "config key '" + key + "'";
        if (key == "epochs") c.epochs = static_cast<int>(integer(v, kw));
        else if (key == "batch_size") c.batch_size = integer(v, kw);
        else if (key == "step_size") c.step_size = number(v, kw);
        else if (key == "net_step_size") c.net_step_size = number(v, kw);
        else if (key == "adam_beta1") c.adam_beta1 = number(v, kw);
        else if (key == "adam_beta2") c.adam_beta2 = number(v, kw);
        else if (key == "adam_epsilon") c.adam_epsilon = number(v, kw);
        else if (key == "inducing_count") c.inducing_count = integer(v, kw);
        else if (key == "layer_sizes") {
            if (!v.is_array()) throw DataError(kw + ": expected an array");
            c.layer_sizes.clear();
            for (const auto& s : v) c.layer_sizes.push_back(integer(s, kw));
        } else if (key == "pretrain_epochs") c.pretrain_epochs = static_cast<int>(integer(v, kw));
        else if (key == "pretrain_step_size") c.pretrain_step_size = number(v, kw);
        else if (key == "jitter_base") c.jitter_base = number(v, kw);
        else if (key == "seed") {
            if (!v.is_number_unsigned()) throw DataError(kw + ": expected a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (key == "shared_inducing" || key == "deep_kernel" || key == "log_full_elbo") {
            if (!v.is_boolean()) throw DataError(kw + ": expected a boolean");
            (key == "shared_inducing" ? c.shared_inducing : key == "deep_kernel" ? c.deep_kernel : c.log_full_elbo) =
                v.get<bool>();
        } else if (key == "warping_alpha") c.warping_alpha = number(v, kw);
        else throw DataError("config: unknown key '" + key + "'");
    }
    return c;
}

TrainConfig load_config(const fs::path& path) { return config_from_json(read_document(path)); }

std::string format_decimal(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

}  // namespace svdkl::io
