// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation battery: Frechet feature distances over autoencoder embeddings
// (holistic motion and face scope), diversity, beat consistency, and the
// jaw / landmark / landmark-velocity L1 family.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tandem/data.hpp"
#include "tandem/errors.hpp"
#include "tandem/ops.hpp"
#include "tandem/params.hpp"
#include "tandem/rng.hpp"
#include "tandem/tensor.hpp"

namespace tandem {

// ---------------------------------------------------------------------------
// Feature autoencoders for FMD / FED / diversity.
// ---------------------------------------------------------------------------

enum class AeScope { holistic, face };

inline std::string ae_scope_name(AeScope s) {
    return s == AeScope::holistic ? "holistic" : "face";
}

inline AeScope parse_ae_scope(const std::string& s) {
    if (s == "holistic") return AeScope::holistic;
    if (s == "face") return AeScope::face;
    throw ConfigError("unknown autoencoder scope: " + s);
}

struct AutoencoderConfig {
    int d_f = 32;
    int hidden = 64;
    int steps = 800;
    int batch = 8;
    double lr = 1e-3;
    double recon_threshold = 0.1;  // fraction of held-out per-element variance
    std::uint64_t seed = 1;
};

// Clip-window MLP autoencoder: flatten an N-frame clip (full motion or the
// face part), encode to d_f features through one hidden layer, decode back.
// Frozen for metric use only once held-out reconstruction clears the
// configured threshold.
class FeatureAutoencoder {
public:
    FeatureAutoencoder() = default;

    static std::vector<double> clip_input(const MotionSequence& m, AeScope scope) {
        if (scope == AeScope::holistic) return concat_motion(m);
        return m.face;
    }

    static FeatureAutoencoder train(const std::vector<const MotionSequence*>& train_clips,
                                    const std::vector<const MotionSequence*>& heldout_clips,
                                    AeScope scope, const AutoencoderConfig& cfg) {
        if (train_clips.size() < 100)
            throw ConfigError("autoencoder training needs at least 100 clips, got " +
                              std::to_string(train_clips.size()));
        if (heldout_clips.empty())
            throw ConfigError("autoencoder training needs held-out clips");

        FeatureAutoencoder ae;
        ae.scope_ = scope;
        ae.frames_ = train_clips[0]->frames;
        ae.in_width_ = static_cast<int>(clip_input(*train_clips[0], scope).size());
        ae.d_f_ = cfg.d_f;
        ae.hidden_ = cfg.hidden;
        ae.cfg_ = cfg;

        Rng init_rng(mix64(cfg.seed, 0x41452d49ULL));
        ae.params_.add("enc.w1", init_weight(init_rng, ae.in_width_, cfg.hidden));
        ae.params_.add("enc.b1", init_bias(cfg.hidden));
        ae.params_.add("enc.w2", init_weight(init_rng, cfg.hidden, cfg.d_f));
        ae.params_.add("enc.b2", init_bias(cfg.d_f));
        ae.params_.add("dec.w1", init_weight(init_rng, cfg.d_f, cfg.hidden));
        ae.params_.add("dec.b1", init_bias(cfg.hidden));
        ae.params_.add("dec.w2", init_weight(init_rng, cfg.hidden, ae.in_width_));
        ae.params_.add("dec.b2", init_bias(ae.in_width_));

        AdamConfig adam_cfg;
        adam_cfg.lr = cfg.lr;
        Adam opt;
        const std::size_t n = train_clips.size();
        for (int step = 0; step < cfg.steps; ++step) {
            Rng rng(mix64(cfg.seed, 0x41453a00ULL + static_cast<std::uint64_t>(step)));
            ae.params_.zero_grads();
            Tensor loss;
            for (int bi = 0; bi < cfg.batch; ++bi) {
                const auto idx = rng.integer(n);
                auto flat = clip_input(*train_clips[idx], scope);
                Tensor x = Tensor::from({1, ae.in_width_}, std::move(flat));
                Tensor item = mse(ae.reconstruct(x), x);
                loss = loss.defined() ? add(loss, item) : item;
            }
            loss = scale(loss, 1.0 / cfg.batch);
            loss.backward();
            opt.step(ae.params_, adam_cfg);
        }

        // Freeze only when held-out reconstruction clears the threshold.
        double mse_sum = 0.0;
        double mean_acc = 0.0, sq_acc = 0.0;
        std::int64_t count = 0;
        {
            NoGradGuard no_grad;
            for (const auto* clip : heldout_clips) {
                auto flat = clip_input(*clip, scope);
                Tensor x = Tensor::from({1, ae.in_width_}, flat);
                Tensor rec = ae.reconstruct(x);
                for (std::size_t i = 0; i < flat.size(); ++i) {
                    const double d = rec.values()[i] - flat[i];
                    mse_sum += d * d;
                    mean_acc += flat[i];
                    sq_acc += flat[i] * flat[i];
                    ++count;
                }
            }
        }
        ae.heldout_mse_ = mse_sum / static_cast<double>(count);
        const double mean = mean_acc / static_cast<double>(count);
        ae.data_variance_ = sq_acc / static_cast<double>(count) - mean * mean;
        ae.frozen_ = ae.heldout_mse_ < cfg.recon_threshold * ae.data_variance_;
        return ae;
    }

    std::vector<double> encode(const MotionSequence& clip) const {
        auto flat = clip_input(clip, scope_);
        if (static_cast<int>(flat.size()) != in_width_)
            throw ShapeError("autoencoder: clip input width " + std::to_string(flat.size()) +
                             " does not match trained width " + std::to_string(in_width_) +
                             " (scope " + ae_scope_name(scope_) + ")");
        NoGradGuard no_grad;
        Tensor x = Tensor::from({1, in_width_}, std::move(flat));
        return encode_tensor(x).values();
    }

    AeScope scope() const { return scope_; }
    int feature_width() const { return d_f_; }
    bool frozen() const { return frozen_; }
    double heldout_mse() const { return heldout_mse_; }
    double data_variance() const { return data_variance_; }

    void save(const std::string& path) const {
        std::ostringstream cfg;
        cfg << "scope=" << ae_scope_name(scope_) << "\n"
            << "frames=" << frames_ << "\n"
            << "in_width=" << in_width_ << "\n"
            << "d_f=" << d_f_ << "\n"
            << "hidden=" << hidden_ << "\n"
            << "frozen=" << (frozen_ ? 1 : 0) << "\n"
            << "heldout_mse=" << heldout_mse_ << "\n"
            << "data_variance=" << data_variance_ << "\n";
        save_checkpoint(path, cfg.str(), 0, params_);
    }

    static FeatureAutoencoder load(const std::string& path) {
        Checkpoint ck = load_checkpoint(path);
        FeatureAutoencoder ae;
        std::istringstream is(ck.config_text);
        std::string line;
        while (std::getline(is, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            if (key == "scope") ae.scope_ = parse_ae_scope(value);
            else if (key == "frames") ae.frames_ = std::stoll(value);
            else if (key == "in_width") ae.in_width_ = std::stoi(value);
            else if (key == "d_f") ae.d_f_ = std::stoi(value);
            else if (key == "hidden") ae.hidden_ = std::stoi(value);
            else if (key == "frozen") ae.frozen_ = value == "1";
            else if (key == "heldout_mse") ae.heldout_mse_ = std::stod(value);
            else if (key == "data_variance") ae.data_variance_ = std::stod(value);
        }
        ae.params_ = std::move(ck.params);
        return ae;
    }

private:
    Tensor encode_tensor(const Tensor& x) const {
        Tensor h = gelu(apply_linear(x, params_.get("enc.w1"), params_.get("enc.b1")));
        return apply_linear(h, params_.get("enc.w2"), params_.get("enc.b2"));
    }
    Tensor reconstruct(const Tensor& x) const {
        Tensor z = encode_tensor(x);
        Tensor h = gelu(apply_linear(z, params_.get("dec.w1"), params_.get("dec.b1")));
        return apply_linear(h, params_.get("dec.w2"), params_.get("dec.b2"));
    }

    ParamStore params_;
    AeScope scope_ = AeScope::holistic;
    std::int64_t frames_ = 0;
    int in_width_ = 0;
    int d_f_ = 32;
    int hidden_ = 64;
    bool frozen_ = false;
    double heldout_mse_ = 0.0;
    double data_variance_ = 0.0;
    AutoencoderConfig cfg_;
};

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian fits of two feature sets.
// ---------------------------------------------------------------------------

namespace metricdetail {

inline Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    Eigen::VectorXd ev = solver.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] > 0.0 ? std::sqrt(ev[i]) : 0.0;
    return solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose();
}

inline void fit_gaussian(const std::vector<std::vector<double>>& set, Eigen::VectorXd& mu,
                         Eigen::MatrixXd& sigma) {
    const Eigen::Index n = static_cast<Eigen::Index>(set.size());
    const Eigen::Index d = static_cast<Eigen::Index>(set[0].size());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = set[static_cast<std::size_t>(i)]
                                                          [static_cast<std::size_t>(j)];
    mu = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    sigma = centered.transpose() * centered / static_cast<double>(n - 1);
}

inline double frechet_from_moments(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1,
                                   const Eigen::VectorXd& mu2, const Eigen::MatrixXd& s2) {
    const Eigen::MatrixXd a = sqrtm_psd(s1);
    Eigen::MatrixXd inner = a * s2 * a;
    inner = 0.5 * (inner + inner.transpose());  // symmetrize
    const double trace_sqrt = sqrtm_psd(inner).trace();
    return (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * trace_sqrt;
}

}  // namespace metricdetail

inline constexpr double kFrechetEps = 1e-6;

// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)); square root by
// eigendecomposition of the symmetrized product. Covariances are regularized
// by kFrechetEps * I only if the plain evaluation is not finite.
inline double frechet(const std::vector<std::vector<double>>& set1,
                      const std::vector<std::vector<double>>& set2) {
    if (set1.empty() || set2.empty()) throw ConfigError("frechet: empty feature set");
    const std::size_t d = set1[0].size();
    const std::size_t minimum = d + 1;
    if (set1.size() < minimum || set2.size() < minimum)
        throw ConfigError("frechet: need at least d+1 = " + std::to_string(minimum) +
                          " samples per set, got " + std::to_string(set1.size()) + " and " +
                          std::to_string(set2.size()));
    for (const auto& v : set2)
        if (v.size() != d) throw ShapeError("frechet: inconsistent feature widths");

    Eigen::VectorXd mu1, mu2;
    Eigen::MatrixXd s1, s2;
    metricdetail::fit_gaussian(set1, mu1, s1);
    metricdetail::fit_gaussian(set2, mu2, s2);
    double value = metricdetail::frechet_from_moments(mu1, s1, mu2, s2);
    if (!std::isfinite(value)) {
        const Eigen::MatrixXd eye =
            Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        value = metricdetail::frechet_from_moments(mu1, s1 + kFrechetEps * eye, mu2,
                                                   s2 + kFrechetEps * eye);
    }
    return value;
}

inline std::vector<std::vector<double>> encode_set(const std::vector<MotionSequence>& clips,
                                                   const FeatureAutoencoder& ae) {
    std::vector<std::vector<double>> out;
    out.reserve(clips.size());
    for (const auto& m : clips) out.push_back(ae.encode(m));
    return out;
}

// Frechet Motion Distance: holistic-scope features of the full motion.
inline double fmd(const std::vector<MotionSequence>& real,
                  const std::vector<MotionSequence>& gen, const FeatureAutoencoder& ae) {
    if (ae.scope() != AeScope::holistic)
        throw ConfigError("fmd requires the holistic-scope autoencoder");
    return frechet(encode_set(real, ae), encode_set(gen, ae));
}

// Frechet Expression Distance: face-scope features of the face part.
inline double fed(const std::vector<MotionSequence>& real,
                  const std::vector<MotionSequence>& gen, const FeatureAutoencoder& ae) {
    if (ae.scope() != AeScope::face)
        throw ConfigError("fed requires the face-scope autoencoder");
    return frechet(encode_set(real, ae), encode_set(gen, ae));
}

// Mean pairwise distance between two disjoint random subsets of the feature
// set, each of size set_size.
inline double diversity_features(const std::vector<std::vector<double>>& features,
                                 std::size_t set_size, Rng& rng) {
    if (features.size() < 2 * set_size)
        throw ConfigError("diversity: need at least 2*set_size = " +
                          std::to_string(2 * set_size) + " clips, got " +
                          std::to_string(features.size()));
    // Partial Fisher-Yates for 2*set_size distinct indices.
    std::vector<std::size_t> idx(features.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < 2 * set_size; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.integer(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    double sum = 0.0;
    for (std::size_t ia = 0; ia < set_size; ++ia)
        for (std::size_t ib = set_size; ib < 2 * set_size; ++ib) {
            const auto& fa = features[idx[ia]];
            const auto& fb = features[idx[ib]];
            double sq = 0.0;
            for (std::size_t c = 0; c < fa.size(); ++c) {
                const double diff = fa[c] - fb[c];
                sq += diff * diff;
            }
            sum += std::sqrt(sq);
        }
    return sum / static_cast<double>(set_size * set_size);
}

inline double diversity(const std::vector<MotionSequence>& gen, const FeatureAutoencoder& ae,
                        std::size_t set_size, Rng& rng) {
    return diversity_features(encode_set(gen, ae), set_size, rng);
}

// ---------------------------------------------------------------------------
// Beat consistency.
// ---------------------------------------------------------------------------

namespace metricdetail {

// Local maxima above mean + 0.5 * std of the series; indices are positions
// in the series.
inline std::vector<std::size_t> peak_indices(const std::vector<double>& v) {
    std::vector<std::size_t> peaks;
    if (v.size() < 3) return peaks;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double threshold = mean + 0.5 * std::sqrt(var);
    for (std::size_t i = 1; i + 1 < v.size(); ++i)
        if (v[i] > threshold && v[i] > v[i - 1] && v[i] >= v[i + 1]) peaks.push_back(i);
    return peaks;
}

}  // namespace metricdetail

// Kinematic beats: local maxima of the mean absolute joint-angle change
// between adjacent frames. Returned in seconds.
inline std::vector<double> kinematic_beats(const MotionSequence& motion, double fps) {
    if (motion.frames < 2) return {};
    const int bw = motion.body_width();
    std::vector<double> change(static_cast<std::size_t>(motion.frames), 0.0);
    for (std::int64_t t = 1; t < motion.frames; ++t) {
        double acc = 0.0;
        for (int j = 0; j < bw; ++j) acc += std::abs(motion.body_at(t, j) - motion.body_at(t - 1, j));
        change[static_cast<std::size_t>(t)] = acc / bw;
    }
    std::vector<double> beats;
    for (auto i : metricdetail::peak_indices(change))
        beats.push_back(static_cast<double>(i) / fps);
    return beats;
}

// Audio beats: local maxima of onset strength (positive temporal difference
// of the envelope). Returned in seconds.
inline std::vector<double> audio_beats(const std::vector<double>& envelope, double fps) {
    if (envelope.size() < 2) return {};
    std::vector<double> onset(envelope.size(), 0.0);
    for (std::size_t t = 1; t < envelope.size(); ++t)
        onset[t] = std::max(0.0, envelope[t] - envelope[t - 1]);
    std::vector<double> beats;
    for (auto i : metricdetail::peak_indices(onset))
        beats.push_back(static_cast<double>(i) / fps);
    return beats;
}

// Mean over audio beats of a Gaussian kernel on the distance to the nearest
// kinematic beat. No kinematic beats -> 0; no audio beats -> missing.
inline std::optional<double> beat_consistency(const MotionSequence& motion,
                                              const std::vector<double>& envelope, double fps,
                                              double sigma = 0.1) {
    if (static_cast<std::int64_t>(envelope.size()) != motion.frames)
        throw ShapeError("beat_consistency: envelope length " +
                         std::to_string(envelope.size()) + " does not match " +
                         std::to_string(motion.frames) + " motion frames");
    const auto audio = audio_beats(envelope, fps);
    if (audio.empty()) return std::nullopt;
    const auto kinematic = kinematic_beats(motion, fps);
    if (kinematic.empty()) return 0.0;
    double acc = 0.0;
    for (double tb : audio) {
        double best = std::numeric_limits<double>::infinity();
        for (double tk : kinematic) best = std::min(best, (tb - tk) * (tb - tk));
        acc += std::exp(-best / (2.0 * sigma * sigma));
    }
    return acc / static_cast<double>(audio.size());
}

// ---------------------------------------------------------------------------
// Jaw / landmark / velocity L1 metrics.
// ---------------------------------------------------------------------------

inline void check_paired_frames(const MotionSequence& gt, const MotionSequence& gen,
                                const char* what) {
    if (gt.frames != gen.frames)
        throw ShapeError(std::string(what) + ": frame mismatch " + std::to_string(gt.frames) +
                         " vs " + std::to_string(gen.frames));
    if (gt.face_width() != gen.face_width())
        throw ShapeError(std::string(what) + ": face width mismatch");
}

// Mean absolute difference over the three jaw rotation channels.
inline double jaw_l1(const MotionSequence& gt, const MotionSequence& gen) {
    check_paired_frames(gt, gen, "jaw_l1");
    double acc = 0.0;
    for (std::int64_t t = 0; t < gt.frames; ++t)
        for (int c = 0; c < 3; ++c) acc += std::abs(gt.face_at(t, c) - gen.face_at(t, c));
    return acc / static_cast<double>(3 * gt.frames);
}

// Fixed sparse-nonnegative landmark basis: (3*L) x face_width, each output
// coordinate a convex mixture of a few face parameters.
inline std::vector<double> landmark_basis(int L, int face_width, std::uint64_t seed) {
    Rng rng(mix64(seed, 0x4c4d4bULL));
    const int rows = 3 * L;
    std::vector<double> basis(static_cast<std::size_t>(rows) *
                                  static_cast<std::size_t>(face_width),
                              0.0);
    constexpr int kNonzero = 4;
    for (int r = 0; r < rows; ++r) {
        double total = 0.0;
        double w[kNonzero];
        int cols[kNonzero];
        for (int k = 0; k < kNonzero; ++k) {
            cols[k] = static_cast<int>(rng.integer(static_cast<std::uint64_t>(face_width)));
            w[k] = rng.uniform(0.1, 1.0);
            total += w[k];
        }
        for (int k = 0; k < kNonzero; ++k)
            basis[static_cast<std::size_t>(r) * static_cast<std::size_t>(face_width) +
                  static_cast<std::size_t>(cols[k])] += w[k] / total;
    }
    return basis;
}

// Landmarks for one face frame: y = basis * f, reshaped to L x 3 points.
inline std::vector<double> landmarks(const std::vector<double>& face_frame,
                                     const std::vector<double>& basis) {
    if (basis.size() % face_frame.size() != 0)
        throw ShapeError("landmarks: basis width does not divide by face width " +
                         std::to_string(face_frame.size()));
    const std::size_t rows = basis.size() / face_frame.size();
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* brow = &basis[r * face_frame.size()];
        double acc = 0.0;
        for (std::size_t c = 0; c < face_frame.size(); ++c) acc += brow[c] * face_frame[c];
        out[r] = acc;
    }
    return out;
}

namespace metricdetail {

inline std::vector<double> face_frame(const MotionSequence& m, std::int64_t t) {
    const int fw = m.face_width();
    return std::vector<double>(m.face.begin() + static_cast<std::ptrdiff_t>(t * fw),
                               m.face.begin() + static_cast<std::ptrdiff_t>((t + 1) * fw));
}

// Per-frame [jaw(3) | landmarks(3L)] vector used by LVD.
inline std::vector<double> jaw_landmark_frame(const MotionSequence& m, std::int64_t t,
                                              const std::vector<double>& basis) {
    auto frame = face_frame(m, t);
    auto lmk = landmarks(frame, basis);
    std::vector<double> out;
    out.reserve(3 + lmk.size());
    out.insert(out.end(), frame.begin(), frame.begin() + 3);
    out.insert(out.end(), lmk.begin(), lmk.end());
    return out;
}

}  // namespace metricdetail

// Mean absolute landmark coordinate difference.
inline double lmk_l1(const MotionSequence& gt, const MotionSequence& gen,
                     const std::vector<double>& basis) {
    check_paired_frames(gt, gen, "lmk_l1");
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t t = 0; t < gt.frames; ++t) {
        const auto a = landmarks(metricdetail::face_frame(gt, t), basis);
        const auto b = landmarks(metricdetail::face_frame(gen, t), basis);
        for (std::size_t i = 0; i < a.size(); ++i) {
            acc += std::abs(a[i] - b[i]);
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

// Mean absolute difference of frame-to-frame jaw+landmark velocities.
inline double lvd(const MotionSequence& gt, const MotionSequence& gen,
                  const std::vector<double>& basis) {
    check_paired_frames(gt, gen, "lvd");
    if (gt.frames < 2) throw ShapeError("lvd: needs at least two frames");
    double acc = 0.0;
    std::int64_t count = 0;
    auto prev_gt = metricdetail::jaw_landmark_frame(gt, 0, basis);
    auto prev_gen = metricdetail::jaw_landmark_frame(gen, 0, basis);
    for (std::int64_t t = 1; t < gt.frames; ++t) {
        auto cur_gt = metricdetail::jaw_landmark_frame(gt, t, basis);
        auto cur_gen = metricdetail::jaw_landmark_frame(gen, t, basis);
        for (std::size_t i = 0; i < cur_gt.size(); ++i) {
            const double v_gt = cur_gt[i] - prev_gt[i];
            const double v_gen = cur_gen[i] - prev_gen[i];
            acc += std::abs(v_gt - v_gen);
            ++count;
        }
        prev_gt = std::move(cur_gt);
        prev_gen = std::move(cur_gen);
    }
    return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Aggregate report.
// ---------------------------------------------------------------------------

struct MetricReport {
    std::optional<double> fmd;
    std::optional<double> div_all;
    std::optional<double> bc;
    std::optional<double> fed;
    std::optional<double> div_face;
    double jaw_l1 = 0.0;
    double lmk_l1 = 0.0;
    double lvd = 0.0;
    std::int64_t params = 0;
    std::string config_hash;

    static std::string csv_header() {
        return "fmd,div_all,bc,fed,div_face,jaw_l1,lmk_l1,lvd,params,config_hash";
    }
    std::string csv_row() const {
        auto cell = [](const std::optional<double>& v) {
            if (!v) return std::string();
            std::ostringstream os;
            os << *v;
            return os.str();
        };
        std::ostringstream os;
        os << cell(fmd) << ',' << cell(div_all) << ',' << cell(bc) << ',' << cell(fed) << ','
           << cell(div_face) << ',' << jaw_l1 << ',' << lmk_l1 << ',' << lvd << ',' << params
           << ',' << config_hash;
        return os.str();
    }
};

struct MetricOptions {
    std::size_t diversity_set_size = 50;
    double bc_sigma = 0.1;
    int landmarks = 68;
    std::uint64_t seed = 1;
};

// Full battery over paired real/generated clips. Autoencoders may be null or
// unfrozen; the Frechet and diversity entries are then left unavailable.
inline MetricReport compute_metrics(const std::vector<MotionSequence>& real,
                                    const std::vector<MotionSequence>& gen,
                                    const std::vector<std::vector<double>>& envelopes,
                                    const FeatureAutoencoder* holistic,
                                    const FeatureAutoencoder* face_ae,
                                    const MetricOptions& opts) {
    if (real.size() != gen.size() || real.empty())
        throw ConfigError("compute_metrics: need equal nonempty real/gen clip sets");
    if (envelopes.size() != gen.size())
        throw ConfigError("compute_metrics: need one envelope per clip");

    MetricReport report;
    Rng rng(mix64(opts.seed, 0x4d455452ULL));

    if (holistic != nullptr && holistic->frozen()) {
        report.fmd = fmd(real, gen, *holistic);
        if (gen.size() >= 2 * opts.diversity_set_size)
            report.div_all = diversity(gen, *holistic, opts.diversity_set_size, rng);
    }
    if (face_ae != nullptr && face_ae->frozen()) {
        report.fed = fed(real, gen, *face_ae);
        if (gen.size() >= 2 * opts.diversity_set_size)
            report.div_face = diversity(gen, *face_ae, opts.diversity_set_size, rng);
    }

    double bc_acc = 0.0;
    std::size_t bc_count = 0;
    double jaw_acc = 0.0, lmk_acc = 0.0, lvd_acc = 0.0;
    const auto basis = landmark_basis(opts.landmarks, real[0].face_width(), opts.seed);
    for (std::size_t i = 0; i < gen.size(); ++i) {
        const auto bc = beat_consistency(gen[i], envelopes[i], gen[i].fps, opts.bc_sigma);
        if (bc) {
            bc_acc += *bc;
            ++bc_count;
        }
        jaw_acc += jaw_l1(real[i], gen[i]);
        lmk_acc += lmk_l1(real[i], gen[i], basis);
        lvd_acc += lvd(real[i], gen[i], basis);
    }
    if (bc_count > 0) report.bc = bc_acc / static_cast<double>(bc_count);
    report.jaw_l1 = jaw_acc / static_cast<double>(gen.size());
    report.lmk_l1 = lmk_acc / static_cast<double>(gen.size());
    report.lvd = lvd_acc / static_cast<double>(gen.size());
    return report;
}

}  // namespace tandem
