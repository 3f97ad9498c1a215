#include "svdkl/trainer.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "svdkl/errors.hpp"
#include "svdkl/random.hpp"
#include "svdkl/svgp.hpp"

namespace svdkl {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Seed streams derived from TrainConfig::seed.
enum SeedStream : std::uint64_t {
    kNetInit = 1,
    kPretrain = 2,
    kInducing = 3,
    kShuffleBase = 1000,
};

// Accumulates the gradient of sum_ij g_ij k(a_i, b_j) into a, b and the kernel parameters.
void backprop_kernel(const Matrix& a, const Matrix& b, const Matrix& k, const Matrix& g,
                     const Vector& inv_l2, Matrix* da, Matrix* db, double& d_log_sf2,
                     Vector& d_log_ls) {
    const Matrix e = g.cwiseProduct(k);
    const Vector rs = e.rowwise().sum();
    const Vector cs = e.colwise().sum().transpose();
    const Matrix eb = e * b;
    d_log_sf2 += e.sum();
    for (Eigen::Index q = 0; q < inv_l2.size(); ++q) {
        const double t = rs.dot(a.col(q).cwiseAbs2()) + cs.dot(b.col(q).cwiseAbs2()) -
                         2.0 * eb.col(q).dot(a.col(q));
        d_log_ls[q] += inv_l2[q] * t;
    }
    if (da != nullptr) {
        Matrix t = eb - rs.asDiagonal() * a;
        t.array().rowwise() *= inv_l2.transpose().array();
        *da += t;
    }
    if (db != nullptr) {
        Matrix t = e.transpose() * a - cs.asDiagonal() * b;
        t.array().rowwise() *= inv_l2.transpose().array();
        *db += t;
    }
}

struct HeadGradient {
    double elbo = 0.0;
    Vector d_mean;
    Matrix d_chol;  // lower, with respect to log-diagonal on the diagonal
    Matrix d_inducing;
    double d_log_noise = 0.0;
    int escalations = 0;
};

// Gradient of scale * sum_i E[log p(y_i|f_i)] - KL for one head. Feature gradients
// and shared kernel gradients are accumulated into d_features / d_log_sf2 / d_log_ls.
HeadGradient head_gradient(const SvgpHead& head, const ArdKernelParams& kernel, const Matrix& h,
                           const Vector& y, double scale, double jitter_base, Matrix& d_features,
                           double& d_log_sf2, Vector& d_log_ls) {
    const auto& st = head.state;
    const Matrix& z = st.inducing_inputs;
    const Eigen::Index m_count = z.rows();
    const Eigen::Index n = h.rows();
    const double sf2 = kernel.signal_variance();
    const double s2 = head.noise_variance();
    const Vector inv_l2 = kernel.inverse_squared_length_scales();

    HeadGradient out;
    const Matrix kzz = kernel_matrix(z, z, kernel);
    const JitteredFactor f = factor_with_jitter(kzz, jitter_base, "K_ZZ");
    out.escalations = f.escalations;
    const auto l = f.lower.triangularView<Eigen::Lower>();
    const Matrix kzx = kernel_matrix(z, h, kernel);
    const Matrix chol_s = st.chol_cov.triangularView<Eigen::Lower>().toDenseMatrix();

    // P = K_ZZ^-1 (jittered). U = W diag(g_var) W^T has rank <= batch size, so products
    // with U are formed through W instead of as M x M matrices.
    const Matrix l_inv = l.solve(Matrix::Identity(m_count, m_count));
    const Matrix l_inv_t = l_inv.transpose();
    const Matrix p = l_inv_t.triangularView<Eigen::Upper>() * l_inv;
    const Matrix a = l_inv.triangularView<Eigen::Lower>() * kzx;  // L^-1 K_ZX
    const Matrix w = l_inv_t.triangularView<Eigen::Upper>() * a;  // K_ZZ^-1 K_ZX
    const Vector alpha = p * st.mean;
    const auto chol_tri = chol_s.triangularView<Eigen::Lower>();
    const Matrix chol_t = chol_s.transpose();
    const Matrix ltw = chol_t.triangularView<Eigen::Upper>() * w;  // L_S^T K_ZZ^-1 K_ZX
    const Matrix p_chol = p * chol_tri;

    const Vector mu = w.transpose() * st.mean;
    const Vector var_raw =
        (sf2 - a.colwise().squaredNorm().array() + ltw.colwise().squaredNorm().array()).transpose();

    double fit = 0.0;
    double noise_acc = 0.0;
    Vector g_mu(n);
    Vector g_var(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double var = std::max(var_raw[i], 0.0);
        const double r = y[i] - mu[i];
        fit += -0.5 * (kLog2Pi + std::log(s2)) - 0.5 * (r * r + var) / s2;
        noise_acc += 0.5 * (r * r + var) / s2 - 0.5;
        g_mu[i] = scale * r / s2;
        g_var[i] = var_raw[i] > 0.0 ? -0.5 * scale / s2 : 0.0;
    }
    const double log_det_k = 2.0 * f.lower.diagonal().array().log().sum();
    const double log_det_s = 2.0 * chol_s.diagonal().array().log().sum();
    const double trace_ps = chol_s.cwiseProduct(p_chol).sum();
    const double kl = 0.5 * (trace_ps + st.mean.dot(alpha) - static_cast<double>(m_count) + log_det_k - log_det_s);
    out.elbo = scale * fit - kl;
    out.d_log_noise = scale * noise_acc;

    Matrix psp = Matrix::Zero(m_count, m_count);
    psp.selfadjointView<Eigen::Lower>().rankUpdate(p_chol);
    psp.triangularView<Eigen::StrictlyUpper>() = psp.transpose();
    const Matrix sw = chol_tri * ltw;
    const Matrix psw = p * sw;  // (S P)^T W

    const Matrix wd = w * g_var.asDiagonal();
    const Matrix u = wd * w.transpose();
    const Matrix u_sp = wd * psw.transpose();
    const Vector w_gmu = w * g_mu;

    out.d_mean = w_gmu - alpha;

    const Matrix wt_chol = w.transpose() * chol_tri;
    out.d_chol = (2.0 * (wd * wt_chol) - p_chol).triangularView<Eigen::Lower>();
    for (Eigen::Index i = 0; i < m_count; ++i) {
        const double lii = chol_s(i, i);
        out.d_chol(i, i) = lii * (out.d_chol(i, i) + 1.0 / lii);
    }

    const Matrix g_kzx = alpha * g_mu.transpose() - 2.0 * (wd - psw * g_var.asDiagonal());
    Matrix g_kzz = -w_gmu * alpha.transpose() + u - u_sp - u_sp.transpose();
    g_kzz += 0.5 * (psp + alpha * alpha.transpose() - p);

    d_log_sf2 += sf2 * g_var.sum();
    d_log_sf2 += f.jitter_absolute * g_kzz.trace();

    out.d_inducing = Matrix::Zero(m_count, z.cols());
    backprop_kernel(z, z, kzz, g_kzz, inv_l2, &out.d_inducing, &out.d_inducing, d_log_sf2, d_log_ls);
    backprop_kernel(z, h, kzx, g_kzx, inv_l2, &out.d_inducing, &d_features, d_log_sf2, d_log_ls);
    return out;
}

void check_finite(const Vector& grad, const ParameterLayout& layout) {
    for (const auto& r : layout.ranges()) {
        if (!grad.segment(r.offset, r.length).allFinite()) {
            throw NumericalError(std::string("non-finite gradient in group '") + group_name(r.group) + "'");
        }
    }
}

}  // namespace

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::kNet: return "net";
        case ParamGroup::kArd: return "ard";
        case ParamGroup::kMean: return "m";
        case ParamGroup::kCholCov: return "chol_S";
        case ParamGroup::kInducing: return "Z";
        case ParamGroup::kNoise: return "noise";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InputError("epochs must be >= 1");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    if (!(step_size > 0.0) || !(net_step_size >= 0.0)) throw InputError("step sizes must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw InputError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) throw InputError("adam_epsilon must be positive");
    if (inducing_count < 1) throw InputError("inducing_count must be >= 1");
    if (deep_kernel) {
        if (layer_sizes.size() < 2) {
            throw InputError("layer_sizes needs at least one hidden layer and an output size");
        }
        for (auto s : layer_sizes) {
            if (s < 1) throw InputError("layer sizes must be >= 1");
        }
    }
    if (pretrain_epochs < 0) throw InputError("pretrain_epochs must be >= 0");
    if (!(jitter_base > 0.0)) throw InputError("jitter_base must be positive");
    if (!(std::abs(warping_alpha) < 1.0)) throw InputError("warping alpha must satisfy |alpha| < 1");
}

bool GroupMask::allows(ParamGroup g) const {
    switch (g) {
        case ParamGroup::kNet: return net;
        case ParamGroup::kArd: return ard;
        case ParamGroup::kMean: return mean;
        case ParamGroup::kCholCov: return chol_cov;
        case ParamGroup::kInducing: return inducing;
        case ParamGroup::kNoise: return noise;
    }
    return false;
}

ParameterLayout::ParameterLayout(const SvdklModel& model) {
    auto add = [&](ParamGroup g, std::size_t head, Eigen::Index len) {
        ranges_.push_back({g, head, total_, len});
        total_ += len;
    };
    add(ParamGroup::kNet, 0, model.net.parameter_count());
    add(ParamGroup::kArd, 0, 1 + model.kernel.dim());
    for (std::size_t d = 0; d < model.heads.size(); ++d) {
        const auto& st = model.heads[d].state;
        const Eigen::Index m = st.size();
        add(ParamGroup::kMean, d, m);
        add(ParamGroup::kCholCov, d, m * (m + 1) / 2);
        add(ParamGroup::kInducing, d, st.inducing_inputs.size());
        add(ParamGroup::kNoise, d, 1);
    }
}

Vector ParameterLayout::pack(const SvdklModel& model) const {
    Vector v(total_);
    for (const auto& r : ranges_) {
        double* out = v.data() + r.offset;
        switch (r.group) {
            case ParamGroup::kNet:
                model.net.pack({out, static_cast<std::size_t>(r.length)});
                break;
            case ParamGroup::kArd:
                out[0] = model.kernel.log_signal_variance;
                for (Eigen::Index q = 0; q < model.kernel.dim(); ++q) out[1 + q] = model.kernel.log_length_scales[q];
                break;
            case ParamGroup::kMean: {
                const auto& m = model.heads[r.head].state.mean;
                for (Eigen::Index i = 0; i < m.size(); ++i) out[i] = m[i];
                break;
            }
            case ParamGroup::kCholCov: {
                const auto& c = model.heads[r.head].state.chol_cov;
                Eigen::Index k = 0;
                for (Eigen::Index i = 0; i < c.rows(); ++i)
                    for (Eigen::Index j = 0; j <= i; ++j) out[k++] = (i == j) ? std::log(c(i, i)) : c(i, j);
                break;
            }
            case ParamGroup::kInducing: {
                const auto& z = model.heads[r.head].state.inducing_inputs;
                Eigen::Index k = 0;
                for (Eigen::Index i = 0; i < z.rows(); ++i)
                    for (Eigen::Index j = 0; j < z.cols(); ++j) out[k++] = z(i, j);
                break;
            }
            case ParamGroup::kNoise:
                out[0] = model.heads[r.head].log_noise_variance;
                break;
        }
    }
    return v;
}

void ParameterLayout::unpack(const Vector& v, SvdklModel& model) const {
    if (v.size() != total_) throw InputError("parameter vector does not match layout");
    for (const auto& r : ranges_) {
        const double* in = v.data() + r.offset;
        switch (r.group) {
            case ParamGroup::kNet:
                model.net.unpack({in, static_cast<std::size_t>(r.length)});
                break;
            case ParamGroup::kArd:
                model.kernel.log_signal_variance = in[0];
                for (Eigen::Index q = 0; q < model.kernel.dim(); ++q) model.kernel.log_length_scales[q] = in[1 + q];
                break;
            case ParamGroup::kMean: {
                auto& m = model.heads[r.head].state.mean;
                for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = in[i];
                break;
            }
            case ParamGroup::kCholCov: {
                auto& c = model.heads[r.head].state.chol_cov;
                c.setZero();
                Eigen::Index k = 0;
                for (Eigen::Index i = 0; i < c.rows(); ++i)
                    for (Eigen::Index j = 0; j <= i; ++j, ++k) c(i, j) = (i == j) ? std::exp(in[k]) : in[k];
                break;
            }
            case ParamGroup::kInducing: {
                auto& z = model.heads[r.head].state.inducing_inputs;
                Eigen::Index k = 0;
                for (Eigen::Index i = 0; i < z.rows(); ++i)
                    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = in[k++];
                break;
            }
            case ParamGroup::kNoise:
                model.heads[r.head].log_noise_variance = in[0];
                break;
        }
    }
}

Vector ParameterLayout::per_entry(const std::function<double(ParamGroup)>& value) const {
    Vector v(total_);
    for (const auto& r : ranges_) v.segment(r.offset, r.length).setConstant(value(r.group));
    return v;
}

GradientRecord compute_gradients(const SvdklModel& model, const Matrix& x_batch,
                                 const Matrix& y_batch, Eigen::Index total_n) {
    model.validate();
    if (x_batch.rows() < 1) throw InputError("compute_gradients: empty batch");
    if (x_batch.rows() > total_n) throw InputError("compute_gradients: batch larger than total_n");
    if (y_batch.rows() != x_batch.rows() || y_batch.cols() != model.output_dim()) {
        throw InputError("compute_gradients: target batch shape mismatch");
    }
    const ParameterLayout layout(model);
    const double scale = static_cast<double>(total_n) / static_cast<double>(x_batch.rows());
    const Matrix xn = model.input_normalizer.apply(x_batch);
    const Matrix h = model.net.forward(xn);

    GradientRecord rec;
    rec.gradient = Vector::Zero(layout.size());
    Matrix d_features = Matrix::Zero(h.rows(), h.cols());
    double d_log_sf2 = 0.0;
    Vector d_log_ls = Vector::Zero(model.kernel.dim());
    double elbo = 0.0;

    // Heads are reduced in index order so shared gradients are reproducible.
    for (const auto& r : layout.ranges()) {
        if (r.group != ParamGroup::kMean) continue;
        const auto d = static_cast<Eigen::Index>(r.head);
        const Vector yc = y_batch.col(d).array() - model.output_centers[d];
        const HeadGradient hg = head_gradient(model.heads[r.head], model.kernel, h, yc, scale,
                                              model.jitter_base, d_features, d_log_sf2, d_log_ls);
        elbo += hg.elbo;
        rec.jitter_escalations += hg.escalations;
        const Eigen::Index m = hg.d_mean.size();
        Eigen::Index off = r.offset;
        rec.gradient.segment(off, m) = hg.d_mean;
        off += m;
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j <= i; ++j) rec.gradient[off++] = hg.d_chol(i, j);
        for (Eigen::Index i = 0; i < hg.d_inducing.rows(); ++i)
            for (Eigen::Index j = 0; j < hg.d_inducing.cols(); ++j) rec.gradient[off++] = hg.d_inducing(i, j);
        rec.gradient[off] = hg.d_log_noise;
    }

    for (const auto& r : layout.ranges()) {
        if (r.group == ParamGroup::kNet) {
            const NetBackward nb = backward(model.net, xn, d_features);
            nb.params.pack({rec.gradient.data() + r.offset, static_cast<std::size_t>(r.length)});
        } else if (r.group == ParamGroup::kArd) {
            rec.gradient[r.offset] = d_log_sf2;
            rec.gradient.segment(r.offset + 1, d_log_ls.size()) = d_log_ls;
        }
    }

    // Minimized objective is the negative ELBO.
    rec.gradient = -rec.gradient;
    rec.objective = -elbo;
    if (!std::isfinite(rec.objective)) throw NumericalError("non-finite ELBO");
    check_finite(rec.gradient, layout);
    return rec;
}

double negative_elbo(const SvdklModel& model, const Matrix& x_batch, const Matrix& y_batch,
                     Eigen::Index total_n) {
    return -elbo_minibatch(model, x_batch, y_batch, total_n);
}

GradCheckReport grad_check(const SvdklModel& model, const Matrix& x, const Matrix& y,
                           double tolerance, double step, const GradientFunction& gradient,
                           Eigen::Index max_per_group) {
    const Eigen::Index n = x.rows();
    const GradientRecord rec = gradient(model, x, y, n);
    const ParameterLayout layout(model);
    const Vector base = layout.pack(model);
    const double floor = 1e-6 * std::max(1.0, std::abs(rec.objective));

    GradCheckReport report;
    report.tolerance = tolerance;
    for (ParamGroup g : kAllGroups) report.groups.push_back({g});

    std::array<Eigen::Index, kAllGroups.size()> totals{};
    for (const auto& r : layout.ranges()) totals[static_cast<std::size_t>(r.group)] += r.length;
    std::array<Eigen::Index, kAllGroups.size()> seen{};
    auto stride = [&](ParamGroup g) {
        const Eigen::Index total = totals[static_cast<std::size_t>(g)];
        if (max_per_group <= 0 || total <= max_per_group) return Eigen::Index{1};
        return (total + max_per_group - 1) / max_per_group;
    };

    SvdklModel probe = model;
    Vector params = base;
    for (const auto& r : layout.ranges()) {
        auto& entry = report.groups[static_cast<std::size_t>(r.group)];
        const Eigen::Index every = stride(r.group);
        for (Eigen::Index k = r.offset; k < r.offset + r.length; ++k) {
            if (seen[static_cast<std::size_t>(r.group)]++ % every != 0) continue;
            params[k] = base[k] + step;
            layout.unpack(params, probe);
            const double up = negative_elbo(probe, x, y, n);
            params[k] = base[k] - step;
            layout.unpack(params, probe);
            const double down = negative_elbo(probe, x, y, n);
            params[k] = base[k];
            const double fd = (up - down) / (2.0 * step);
            const double an = rec.gradient[k];
            const double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
            ++entry.checked;
            if (err > entry.worst_relative_error || entry.worst_index < 0) {
                entry.worst_relative_error = err;
                entry.worst_index = k;
            }
        }
    }
    for (auto& entry : report.groups) {
        entry.passed = !(entry.worst_relative_error > tolerance);
        report.passed = report.passed && entry.passed;
    }
    return report;
}

SvdklModel initialize_model(const AlignedCorpus& corpus, const TrainConfig& cfg, TrainingLog* log) {
    cfg.validate();
    const Eigen::Index n = corpus.x.rows();
    if (n < 1) throw InputError("training corpus is empty");
    if (corpus.y.rows() != n) throw InputError("corpus X and Y row counts differ");
    if (corpus.x.cols() < 1 || corpus.y.cols() < 1) throw InputError("corpus has no feature columns");
    if (!corpus.x.allFinite() || !corpus.y.allFinite()) throw InputError("corpus has non-finite values");
    const Eigen::Index dim = corpus.x.cols();
    const Eigen::Index outputs = corpus.y.cols();

    SvdklModel model;
    model.jitter_base = cfg.jitter_base;
    model.warping_alpha = cfg.warping_alpha;
    model.input_normalizer = InputNormalizer::fit(corpus.x);
    model.output_centers = corpus.y.colwise().mean().transpose();
    model.f0_source = corpus.f0_source;
    model.f0_target = corpus.f0_target;
    const Matrix xn = model.input_normalizer.apply(corpus.x);

    if (cfg.deep_kernel) {
        std::vector<Eigen::Index> sizes{dim};
        sizes.insert(sizes.end(), cfg.layer_sizes.begin(), cfg.layer_sizes.end());
        model.net = FeedForwardNet::glorot(sizes, derive_seed(cfg.seed, kNetInit));
        if (cfg.pretrain_epochs > 0 && n >= 2) {
            model.net = pretrain_layerwise(model.net, xn, cfg.pretrain_epochs, cfg.pretrain_step_size,
                                           derive_seed(cfg.seed, kPretrain));
        }
    } else {
        model.net = FeedForwardNet::identity(dim);
    }
    const Matrix h = model.net.forward(xn);
    const Eigen::Index q = h.cols();

    Matrix yc = corpus.y;
    yc.rowwise() -= model.output_centers.transpose();
    const Vector out_var = yc.colwise().squaredNorm().transpose() / static_cast<double>(n);
    const double mean_var = out_var.mean();
    Vector log_ls(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        const double mu = h.col(j).mean();
        const double sd = std::sqrt((h.col(j).array() - mu).square().mean());
        log_ls[j] = std::log((sd > 1e-8 ? sd : 1.0) * std::sqrt(static_cast<double>(q)));
    }
    model.kernel = ArdKernelParams(std::log(mean_var > 0.0 ? mean_var : 1.0), log_ls);

    Eigen::Index m = cfg.inducing_count;
    if (m > n) {
        if (log != nullptr) {
            log->warnings.push_back("inducing_count " + std::to_string(m) + " exceeds " +
                                    std::to_string(n) + " training rows; clamped");
        }
        m = n;
    }

    Rng rng(derive_seed(cfg.seed, kInducing));
    auto draw_inducing = [&]() {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        // Partial Fisher-Yates: the first m entries are a uniform distinct subset.
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto j = i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n - i)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        Matrix z(m, q);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < q; ++j) {
                z(i, j) = h(idx[static_cast<std::size_t>(i)], j) + 1e-3 * rng.normal();
            }
        }
        return z;
    };

    Matrix shared_z;
    if (cfg.shared_inducing) shared_z = draw_inducing();
    for (Eigen::Index d = 0; d < outputs; ++d) {
        SvgpHead head;
        head.state.inducing_inputs = cfg.shared_inducing ? shared_z : draw_inducing();
        head.state.mean = Vector::Zero(m);
        head.state.chol_cov =
            0.1 * psd_factor(head.state.inducing_inputs, model.kernel, cfg.jitter_base, "K_ZZ").lower;
        const double v = out_var[d] > 0.0 ? out_var[d] : (mean_var > 0.0 ? mean_var : 1.0);
        head.log_noise_variance = std::log(0.1 * v);
        model.heads.push_back(std::move(head));
    }
    model.validate();
    return model;
}

void optimize(SvdklModel& model, const Matrix& x, const Matrix& y, const TrainConfig& cfg,
              const GroupMask& mask, TrainingLog& log, const EpochCallback& on_epoch) {
    cfg.validate();
    const Eigen::Index n = x.rows();
    if (n < 1) throw InputError("cannot optimize on an empty data set");
    const ParameterLayout layout(model);
    Vector params = layout.pack(model);
    const Vector steps = layout.per_entry([&](ParamGroup g) {
        if (!mask.allows(g)) return 0.0;
        return g == ParamGroup::kNet ? cfg.net_step_size : cfg.step_size;
    });
    AdamState state(params.size());
    const AdamSettings adam = cfg.adam();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    const Eigen::Index batch = std::min(cfg.batch_size, n);
    Matrix xb;
    Matrix yb;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        if (batch < n) {
            Rng rng(derive_seed(cfg.seed, kShuffleBase + static_cast<std::uint64_t>(epoch)));
            rng.shuffle(order);
        }
        TrainingLogRow row;
        row.epoch = epoch;
        double objective_sum = 0.0;
        int batches = 0;
        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index len = std::min(batch, n - start);
            xb.resize(len, x.cols());
            yb.resize(len, y.cols());
            for (Eigen::Index i = 0; i < len; ++i) {
                const Eigen::Index src = order[static_cast<std::size_t>(start + i)];
                xb.row(i) = x.row(src);
                yb.row(i) = y.row(src);
            }
            GradientRecord rec;
            try {
                rec = compute_gradients(model, xb, yb, n);
            } catch (const NumericalError& e) {
                throw NumericalError("epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batches) + ": " + e.what());
            }
            if (cfg.shared_inducing) {
                // Heads share one Z: every head receives the summed gradient.
                Vector sum;
                for (const auto& r : layout.ranges()) {
                    if (r.group != ParamGroup::kInducing) continue;
                    if (sum.size() == 0) sum = Vector::Zero(r.length);
                    sum += rec.gradient.segment(r.offset, r.length);
                }
                for (const auto& r : layout.ranges()) {
                    if (r.group == ParamGroup::kInducing) rec.gradient.segment(r.offset, r.length) = sum;
                }
            }
            adam_step(params, rec.gradient, state, adam, steps);
            layout.unpack(params, model);
            objective_sum += rec.objective;
            row.jitter_escalations += rec.jitter_escalations;
            ++batches;
        }
        row.mean_objective = objective_sum / batches;
        if (cfg.log_full_elbo) row.full_elbo = elbo_full(model, x, y);
        log.rows.push_back(row);
        if (on_epoch) on_epoch(row);
    }
}

TrainResult train(const AlignedCorpus& corpus, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    TrainResult result;
    result.model = initialize_model(corpus, cfg, &result.log);
    GroupMask mask;
    mask.net = cfg.deep_kernel;
    optimize(result.model, corpus.x, corpus.y, cfg, mask, result.log, on_epoch);
    return result;
}

}  // namespace svdkl
