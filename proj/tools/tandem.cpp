// Copyright (c) 2026 The Tandem Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: dataset synthesis, training, long-form generation,
// evaluation, and gradient checking. Every run is reproducible from the
// (config file, seed) pair; the config hash is embedded in all outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tandem/data.hpp"
#include "tandem/diffusion.hpp"
#include "tandem/metrics.hpp"
#include "tandem/network.hpp"
#include "tandem/params.hpp"
#include "tandem/sampler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tandem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

// Full run configuration: the model section plus training, synthesis, and
// evaluation knobs. One flat key=value file; command-line --set overrides.
struct RunConfig {
    ModelConfig model;
    // training
    std::int64_t steps = 2000;
    int batch = 4;
    double lr = 1e-3;
    double lambda_vel = 1.0;
    std::int64_t ckpt_every = 500;
    std::uint64_t seed = 1;
    int nan_streak_limit = 3;
    // synthesis
    int num_sequences = 200;
    std::int64_t frames_per_sequence = 124;
    double train_frac = 0.8;
    double val_frac = 0.1;
    // evaluation
    std::size_t diversity_set_size = 50;
    double bc_sigma = 0.1;
    int landmark_count = 68;
    int ae_steps = 800;
    int ae_hidden = 64;
    int ae_d_f = 32;
    double ae_lr = 1e-3;
    double ae_threshold = 0.1;

    bool apply_key(const std::string& key, const std::string& value) {
        if (model.apply_key(key, value)) return true;
        if (key == "steps") steps = std::stoll(value);
        else if (key == "batch") batch = std::stoi(value);
        else if (key == "lr") lr = std::stod(value);
        else if (key == "lambda_vel") lambda_vel = std::stod(value);
        else if (key == "ckpt_every") ckpt_every = std::stoll(value);
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "nan_streak_limit") nan_streak_limit = std::stoi(value);
        else if (key == "num_sequences") num_sequences = std::stoi(value);
        else if (key == "frames_per_sequence") frames_per_sequence = std::stoll(value);
        else if (key == "train_frac") train_frac = std::stod(value);
        else if (key == "val_frac") val_frac = std::stod(value);
        else if (key == "diversity_set_size") diversity_set_size = std::stoull(value);
        else if (key == "bc_sigma") bc_sigma = std::stod(value);
        else if (key == "landmark_count") landmark_count = std::stoi(value);
        else if (key == "ae_steps") ae_steps = std::stoi(value);
        else if (key == "ae_hidden") ae_hidden = std::stoi(value);
        else if (key == "ae_d_f") ae_d_f = std::stoi(value);
        else if (key == "ae_lr") ae_lr = std::stod(value);
        else if (key == "ae_threshold") ae_threshold = std::stod(value);
        else return false;
        return true;
    }

    std::string to_text() const {
        std::ostringstream os;
        os << model.to_text();
        os << "ae_d_f=" << ae_d_f << "\n";
        os << "ae_hidden=" << ae_hidden << "\n";
        os << "ae_lr=" << ae_lr << "\n";
        os << "ae_steps=" << ae_steps << "\n";
        os << "ae_threshold=" << ae_threshold << "\n";
        os << "batch=" << batch << "\n";
        os << "bc_sigma=" << bc_sigma << "\n";
        os << "ckpt_every=" << ckpt_every << "\n";
        os << "diversity_set_size=" << diversity_set_size << "\n";
        os << "frames_per_sequence=" << frames_per_sequence << "\n";
        os << "lambda_vel=" << lambda_vel << "\n";
        os << "landmark_count=" << landmark_count << "\n";
        os << "lr=" << lr << "\n";
        os << "nan_streak_limit=" << nan_streak_limit << "\n";
        os << "num_sequences=" << num_sequences << "\n";
        os << "seed=" << seed << "\n";
        os << "steps=" << steps << "\n";
        os << "train_frac=" << train_frac << "\n";
        os << "val_frac=" << val_frac << "\n";
        return os.str();
    }

    std::string hash_hex_str() const { return hex64(fnv1a64(to_text())); }

    static RunConfig from_sources(const std::string& config_path,
                                  const std::vector<std::string>& overrides) {
        RunConfig cfg;
        if (!config_path.empty()) {
            std::ifstream is(config_path);
            if (!is) throw IoError("cannot open config file: " + config_path);
            std::string line;
            int lineno = 0;
            while (std::getline(is, line)) {
                ++lineno;
                if (line.empty() || line[0] == '#') continue;
                const auto eq = line.find('=');
                if (eq == std::string::npos)
                    throw ConfigError(config_path + ":" + std::to_string(lineno) +
                                      ": expected key=value");
                if (!cfg.apply_key(line.substr(0, eq), line.substr(eq + 1)))
                    throw ConfigError(config_path + ":" + std::to_string(lineno) +
                                      ": unknown key: " + line.substr(0, eq));
            }
        }
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects key=value, got: " + kv);
            if (!cfg.apply_key(kv.substr(0, eq), kv.substr(eq + 1)))
                throw ConfigError("--set: unknown key: " + kv.substr(0, eq));
        }
        cfg.model.validate();
        return cfg;
    }

    static RunConfig from_text(const std::string& text) {
        RunConfig cfg;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            cfg.apply_key(line.substr(0, eq), line.substr(eq + 1));
        }
        cfg.model.validate();
        return cfg;
    }
};

std::string zero_pad(int v, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << v;
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
    if (cfg.num_sequences <= 0)
        throw ConfigError("synth: num_sequences must be positive, got " +
                          std::to_string(cfg.num_sequences));
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw IoError("synth: cannot create output directory " + out_dir);

    SynthConfig sc;
    sc.seed = cfg.seed;
    sc.num_sequences = cfg.num_sequences;
    sc.frames_per_sequence = cfg.frames_per_sequence;
    sc.speakers = cfg.model.S;
    sc.audio_dim = cfg.model.D_a;
    sc.J = cfg.model.J;
    sc.E = cfg.model.E;
    auto data = synth_dataset(sc);

    const int n = cfg.num_sequences;
    const int n_train = static_cast<int>(std::floor(cfg.train_frac * n));
    const int n_val = static_cast<int>(std::floor((cfg.train_frac + cfg.val_frac) * n)) - n_train;
    const std::int64_t clips_per_seq =
        (cfg.frames_per_sequence - cfg.model.N) / (cfg.model.N - cfg.model.M) + 1;

    json manifest;
    manifest["schema"] = "tandem-manifest-v1";
    manifest["config_hash"] = cfg.hash_hex_str();
    manifest["seed"] = cfg.seed;
    manifest["num_sequences"] = n;
    manifest["frames_per_sequence"] = cfg.frames_per_sequence;
    manifest["speakers"] = cfg.model.S;
    manifest["n"] = cfg.model.N;
    manifest["m"] = cfg.model.M;
    manifest["split_fractions"] = {{"train", cfg.train_frac},
                                   {"val", cfg.val_frac},
                                   {"test", 1.0 - cfg.train_frac - cfg.val_frac}};
    json sequences = json::array();
    std::int64_t train_clips = 0, val_clips = 0, test_clips = 0;
    for (int i = 0; i < n; ++i) {
        const std::string motion_name = "motion_" + zero_pad(i, 4) + ".bin";
        const std::string audio_name = "audio_" + zero_pad(i, 4) + ".bin";
        save_motion((fs::path(out_dir) / motion_name).string(), data.motions[i]);
        save_features((fs::path(out_dir) / audio_name).string(), data.audios[i]);
        const std::string split =
            i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        (split == "train" ? train_clips : split == "val" ? val_clips : test_clips) +=
            clips_per_seq;
        sequences.push_back({{"motion", motion_name},
                             {"audio", audio_name},
                             {"speaker", data.speaker_ids[i]},
                             {"split", split}});
    }
    manifest["sequences"] = sequences;
    manifest["clip_counts"] = {{"train", train_clips}, {"val", val_clips}, {"test", test_clips}};
    write_text(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << n << " sequences (" << train_clips << "/" << val_clips << "/"
              << test_clips << " train/val/test clips) to " << out_dir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// manifest loading shared by train / evaluate
// ---------------------------------------------------------------------------

struct LoadedDataset {
    DatasetSplit split;
    RunConfig config;  // reconstructed defaults; model dims validated
};

DatasetSplit load_manifest_clips(const std::string& manifest_path, const ModelConfig& model) {
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open manifest: " + manifest_path);
    json manifest = json::parse(is, nullptr, /*allow_exceptions=*/true);
    if (manifest.value("schema", "") != "tandem-manifest-v1")
        throw IoError("manifest: unexpected schema");
    const fs::path dir = fs::path(manifest_path).parent_path();
    DatasetSplit split;
    for (const auto& seq : manifest.at("sequences")) {
        auto motion = load_motion((dir / seq.at("motion").get<std::string>()).string(),
                                  /*strict=*/true, model.J, model.E);
        auto audio = load_features((dir / seq.at("audio").get<std::string>()).string());
        if (audio.dim != model.D_a)
            throw ShapeError("manifest: audio dim " + std::to_string(audio.dim) +
                             " does not match configured d_a=" + std::to_string(model.D_a));
        auto clips = window_clips(motion, audio, model.N, model.M, seq.at("speaker").get<int>());
        const std::string bucket = seq.at("split").get<std::string>();
        auto& dst = bucket == "train" ? split.train : bucket == "val" ? split.val : split.test;
        for (auto& c : clips) dst.push_back(std::move(c));
    }
    return split;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(RunConfig cfg, const std::string& data_manifest, const std::string& variant,
              const std::string& out_dir, const std::string& resume_path) {
    if (!variant.empty()) cfg.model.variant = parse_variant(variant);
    cfg.model.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw IoError("train: cannot create " + out_dir);

    auto split = load_manifest_clips(data_manifest, cfg.model);
    if (split.train.empty()) throw ConfigError("train: manifest has no training clips");

    Denoiser net(cfg.model, cfg.seed);
    Adam opt;
    std::int64_t start_step = 0;
    if (!resume_path.empty()) {
        Checkpoint ck = load_checkpoint(resume_path);
        RunConfig saved = RunConfig::from_text(ck.config_text);
        if (saved.model.to_text() != cfg.model.to_text())
            throw ConfigError("train: checkpoint model config does not match this run");
        net = Denoiser(cfg.model, std::move(ck.params));
        if (ck.has_optimizer) restore_optimizer(opt, ck);
        start_step = ck.step;
    }
    std::cout << "variant=" << variant_name(cfg.model.variant)
              << " param_count=" << net.param_count() << "\n";

    auto schedule = cfg.model.schedule();
    TrainStepOptions opts;
    opts.lambda_vel = cfg.lambda_vel;
    opts.adam.lr = cfg.lr;
    opts.run_seed = cfg.seed;
    opts.variance = parse_reverse_variance(cfg.model.reverse_variance);

    const fs::path csv_path = fs::path(out_dir) / "loss.csv";
    std::ofstream csv(csv_path, start_step == 0 ? std::ios::trunc : std::ios::app);
    if (start_step == 0) csv << "step,loss_rec,loss_vel,total\n";

    const fs::path ckpt_path = fs::path(out_dir) / "checkpoint.bin";
    auto save = [&](std::int64_t step) {
        save_checkpoint(ckpt_path.string(), cfg.to_text(), step, net.params(), &opt);
    };

    auto graph = net.graph();
    int nan_streak = 0;
    for (std::int64_t step = start_step; step < cfg.steps; ++step) {
        Rng batch_rng(mix64(cfg.seed, 0x42415400ULL + static_cast<std::uint64_t>(step)));
        std::vector<const ClipSample*> batch;
        for (int b = 0; b < cfg.batch; ++b)
            batch.push_back(&split.train[batch_rng.integer(split.train.size())]);
        auto result = train_step(batch, graph, net.params(), opt, schedule, opts, step);
        csv << step << ',' << result.rec << ',' << result.vel << ',' << result.total << '\n';
        if (!result.applied) {
            ++nan_streak;
            std::cerr << "warning: step " << step << " skipped (non-finite)\n";
            if (nan_streak >= cfg.nan_streak_limit) {
                save(step);
                std::cerr << "error: " << nan_streak
                          << " consecutive non-finite steps; last good checkpoint retained at "
                          << ckpt_path << "\n";
                return kExitNumeric;
            }
        } else {
            nan_streak = 0;
        }
        if (cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0) save(step + 1);
        if (step == start_step || (step + 1) % 100 == 0)
            std::cout << "step " << (step + 1) << "/" << cfg.steps << " total=" << result.total
                      << " rec=" << result.rec << " vel=" << result.vel << "\n";
    }
    save(cfg.steps);
    std::cout << "final checkpoint: " << ckpt_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

// Config recorded in the checkpoint, with command-line --set overrides for
// run knobs (the model section must stay untouched to match the weights).
RunConfig config_from_checkpoint(const Checkpoint& ck,
                                 const std::vector<std::string>& overrides) {
    RunConfig cfg = RunConfig::from_text(ck.config_text);
    const std::string model_text = cfg.model.to_text();
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
        if (!cfg.apply_key(kv.substr(0, eq), kv.substr(eq + 1)))
            throw ConfigError("--set: unknown key: " + kv.substr(0, eq));
    }
    if (cfg.model.to_text() != model_text)
        throw ConfigError("cannot override model architecture keys of a checkpoint");
    return cfg;
}

int cmd_generate(const std::string& checkpoint_path, const std::string& features_path,
                 const std::string& seed_motion_path, int speaker, const std::string& out_path,
                 std::uint64_t rng_seed, const std::string& sidecar_path,
                 const std::vector<std::string>& overrides) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    RunConfig cfg = config_from_checkpoint(ck, overrides);
    Denoiser net(cfg.model, std::move(ck.params));

    auto audio = load_features(features_path);
    if (audio.dim != cfg.model.D_a)
        throw ShapeError("generate: feature dim " + std::to_string(audio.dim) +
                         " does not match checkpoint d_a=" + std::to_string(cfg.model.D_a));
    if (seed_motion_path.empty())
        throw ConfigError("generate: a seed motion file with at least M=" +
                          std::to_string(cfg.model.M) + " frames is required");
    auto seed_motion = load_motion(seed_motion_path, /*strict=*/true, cfg.model.J, cfg.model.E);
    if (seed_motion.frames < cfg.model.M)
        throw ShapeError("generate: seed motion has " + std::to_string(seed_motion.frames) +
                         " frames, need at least M=" + std::to_string(cfg.model.M));
    const auto seed = concat_motion(seed_motion.slice(0, cfg.model.M));

    auto schedule = cfg.model.schedule();
    Rng rng(mix64(rng_seed, 0x47454eULL));
    GenerationTrace trace;
    auto motion = generate_long(net.sample_fn(), audio, seed, speaker, cfg.model, schedule, rng,
                                &trace);
    save_motion(out_path, motion);

    json sidecar;
    sidecar["schema"] = "tandem-sidecar-v1";
    sidecar["config_hash"] = cfg.hash_hex_str();
    sidecar["rng_seed"] = rng_seed;
    sidecar["frames"] = motion.frames;
    sidecar["speaker"] = speaker;
    sidecar["segment_offsets"] = trace.segment_offsets;
    json regions = json::array();
    for (const auto& r : trace.blend_regions)
        regions.push_back({{"start", r.start}, {"length", r.length}});
    sidecar["blend_regions"] = regions;
    const std::string sidecar_out = sidecar_path.empty() ? out_path + ".json" : sidecar_path;
    write_text(sidecar_out, sidecar.dump(2) + "\n");
    std::cout << "wrote " << motion.frames << " frames to " << out_path << " (sidecar "
              << sidecar_out << ")\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

std::vector<const MotionSequence*> motion_ptrs(const std::vector<ClipSample>& clips) {
    std::vector<const MotionSequence*> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back(&c.motion);
    return out;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data_manifest,
                 const std::string& out_path, std::string ae_holistic_path,
                 std::string ae_face_path, bool fit_autoencoders, bool use_ground_truth,
                 std::uint64_t rng_seed, const std::vector<std::string>& overrides) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    RunConfig cfg = config_from_checkpoint(ck, overrides);
    Denoiser net(cfg.model, std::move(ck.params));
    auto split = load_manifest_clips(data_manifest, cfg.model);
    if (split.test.empty()) throw ConfigError("evaluate: manifest has no test clips");

    std::optional<FeatureAutoencoder> holistic, face_ae;
    if (fit_autoencoders) {
        AutoencoderConfig acfg;
        acfg.d_f = cfg.ae_d_f;
        acfg.hidden = cfg.ae_hidden;
        acfg.steps = cfg.ae_steps;
        acfg.lr = cfg.ae_lr;
        acfg.recon_threshold = cfg.ae_threshold;
        acfg.seed = cfg.seed;
        auto train_ptrs = motion_ptrs(split.train);
        auto val_ptrs = motion_ptrs(split.val.empty() ? split.test : split.val);
        holistic = FeatureAutoencoder::train(train_ptrs, val_ptrs, AeScope::holistic, acfg);
        face_ae = FeatureAutoencoder::train(train_ptrs, val_ptrs, AeScope::face, acfg);
        const fs::path dir = fs::path(out_path).parent_path();
        if (ae_holistic_path.empty()) ae_holistic_path = (dir / "ae_holistic.bin").string();
        if (ae_face_path.empty()) ae_face_path = (dir / "ae_face.bin").string();
        holistic->save(ae_holistic_path);
        face_ae->save(ae_face_path);
        if (!holistic->frozen() || !face_ae->frozen())
            std::cerr << "warning: autoencoder reconstruction threshold not reached; "
                         "frechet metrics will be unavailable\n";
    } else {
        if (!ae_holistic_path.empty() && fs::exists(ae_holistic_path))
            holistic = FeatureAutoencoder::load(ae_holistic_path);
        if (!ae_face_path.empty() && fs::exists(ae_face_path))
            face_ae = FeatureAutoencoder::load(ae_face_path);
        if (!holistic || !face_ae)
            std::cerr << "warning: missing autoencoder checkpoint(s); FMD/FED/Div "
                         "unavailable, remaining metrics still computed\n";
    }

    auto schedule = cfg.model.schedule();
    std::vector<MotionSequence> real, gen;
    std::vector<std::vector<double>> envelopes;
    Rng rng(mix64(rng_seed, 0x4556414cULL));
    for (const auto& clip : split.test) {
        real.push_back(clip.motion);
        envelopes.push_back(clip.audio.envelope());
        if (use_ground_truth) {
            gen.push_back(clip.motion);
        } else {
            Conditioning c = conditioning_from_clip(clip, cfg.model.T);
            gen.push_back(sample_segment(net.sample_fn(), c, cfg.model, schedule, rng));
        }
    }

    MetricOptions mopts;
    mopts.diversity_set_size = cfg.diversity_set_size;
    mopts.bc_sigma = cfg.bc_sigma;
    mopts.landmarks = cfg.landmark_count;
    mopts.seed = rng_seed;
    auto report = compute_metrics(real, gen, envelopes,
                                  holistic && holistic->frozen() ? &*holistic : nullptr,
                                  face_ae && face_ae->frozen() ? &*face_ae : nullptr, mopts);
    report.params = net.param_count();
    report.config_hash = cfg.hash_hex_str();

    json out;
    out["schema"] = "tandem-metric-report-v1";
    out["config_hash"] = report.config_hash;
    out["variant"] = variant_name(cfg.model.variant);
    out["clips"] = split.test.size();
    out["params"] = report.params;
    auto set_opt = [&](const char* key, const std::optional<double>& v) {
        if (v) out[key] = *v;
        else out[key] = nullptr;
    };
    set_opt("fmd", report.fmd);
    set_opt("div_all", report.div_all);
    set_opt("bc", report.bc);
    set_opt("fed", report.fed);
    set_opt("div_face", report.div_face);
    out["jaw_l1"] = report.jaw_l1;
    out["lmk_l1"] = report.lmk_l1;
    out["lvd"] = report.lvd;
    write_text(out_path, out.dump(2) + "\n");
    write_text(out_path + ".csv", MetricReport::csv_header() + "\n" + report.csv_row() + "\n");
    std::cout << "report: " << out_path << "\n" << report.csv_row() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

ModelConfig gradcheck_default_config() {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.L_e = 1;
    cfg.L_d = 1;
    cfg.K = 4;
    cfg.d_b = 2;
    cfg.N = 2;
    cfg.M = 1;
    cfg.T = 5;
    cfg.beta_start = 1e-3;
    cfg.beta_end = 0.2;
    cfg.head_init = "random";
    return cfg;
}

int cmd_gradcheck(const RunConfig* cfg_opt, double tolerance, std::int64_t max_coords) {
    ModelConfig cfg = cfg_opt ? cfg_opt->model : gradcheck_default_config();
    cfg.head_init = "random";
    Denoiser net(cfg, 7);
    randomize_heads(net, 11);

    Rng rng(13);
    Conditioning c;
    c.seed_frames = cfg.M;
    c.seed.resize(static_cast<std::size_t>(cfg.M * cfg.motion_width()));
    for (auto& v : c.seed) v = rng.uniform(-1, 1);
    c.audio.frames = cfg.N;
    c.audio.dim = cfg.D_a;
    c.audio.values.resize(static_cast<std::size_t>(cfg.N * cfg.D_a));
    for (auto& v : c.audio.values) v = rng.uniform(0, 1);
    c.speaker_id = 0;
    c.t = std::max(1, cfg.T / 2);

    std::vector<double> xf(static_cast<std::size_t>(cfg.N * cfg.face_width()));
    std::vector<double> xb(static_cast<std::size_t>(cfg.N * cfg.body_width()));
    std::vector<double> tf(xf.size()), tb(xb.size());
    for (auto& v : xf) v = rng.uniform(-1, 1);
    for (auto& v : xb) v = rng.uniform(-1, 1);
    for (auto& v : tf) v = rng.uniform(-1, 1);
    for (auto& v : tb) v = rng.uniform(-1, 1);
    Tensor xft = Tensor::from({cfg.N, cfg.face_width()}, xf);
    Tensor xbt = Tensor::from({cfg.N, cfg.body_width()}, xb);
    Tensor tft = Tensor::from({cfg.N, cfg.face_width()}, tf);
    Tensor tbt = Tensor::from({cfg.N, cfg.body_width()}, tb);

    auto loss = [&]() {
        auto [of, ob] = net.forward(xft, xbt, c);
        Tensor x0_hat = concat_cols(ob, of);
        Tensor x0 = concat_cols(tbt, tft);
        return add(loss_rec(x0, x0_hat), loss_vel(x0, x0_hat));
    };
    const auto t0 = std::chrono::steady_clock::now();
    auto report = grad_check(loss, net.params(), 1e-5, max_coords);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::cout << "full-network gradient check: " << report.entries.size() << " parameters, "
              << "max rel err " << report.max_rel_err << " (worst: " << report.worst_name
              << "), " << seconds << " s\n";
    const bool pass = report.pass(tolerance);
    std::cout << (pass ? "PASS" : "FAIL") << " (tolerance " << tolerance << ")\n";
    return pass ? kExitOk : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint co-speech gesture and talking-face motion diffusion"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "key=value config file")->configurable(false);
    app.add_option("--set", overrides, "override config entries (key=value)");

    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    std::string synth_out = "data";
    synth->add_option("--out", synth_out, "output directory");

    auto* train = app.add_subcommand("train", "train a denoiser variant");
    std::string train_data, train_variant, train_out = "run", train_resume;
    train->add_option("--data", train_data, "manifest.json path")->required();
    train->add_option("--variant", train_variant,
                      "joint_adapters|separate|combined|split (default from config)");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    auto* generate = app.add_subcommand("generate", "long-form generation from audio features");
    std::string gen_ckpt, gen_features, gen_seed_motion, gen_out = "generated.bin",
                          gen_sidecar;
    int gen_speaker = 0;
    std::uint64_t gen_rng_seed = 1;
    generate->add_option("--checkpoint", gen_ckpt)->required();
    generate->add_option("--features", gen_features, "audio feature file")->required();
    generate->add_option("--seed-motion", gen_seed_motion,
                         "motion file providing the first M frames");
    generate->add_option("--speaker", gen_speaker);
    generate->add_option("--out", gen_out);
    generate->add_option("--rng-seed", gen_rng_seed);
    generate->add_option("--sidecar", gen_sidecar, "sidecar JSON path (default <out>.json)");

    auto* evaluate = app.add_subcommand("evaluate", "run the metric battery on the test split");
    std::string eval_ckpt, eval_data, eval_out = "report.json", eval_ae_holistic, eval_ae_face;
    bool eval_fit_ae = false, eval_use_gt = false;
    std::uint64_t eval_rng_seed = 1;
    evaluate->add_option("--checkpoint", eval_ckpt)->required();
    evaluate->add_option("--data", eval_data, "manifest.json path")->required();
    evaluate->add_option("--out", eval_out, "report JSON path");
    evaluate->add_option("--ae-holistic", eval_ae_holistic, "holistic autoencoder checkpoint");
    evaluate->add_option("--ae-face", eval_ae_face, "face autoencoder checkpoint");
    evaluate->add_flag("--fit-autoencoders", eval_fit_ae,
                       "train and save the metric autoencoders first");
    evaluate->add_flag("--use-ground-truth", eval_use_gt,
                       "score the ground truth against itself (sanity mode)");
    evaluate->add_option("--rng-seed", eval_rng_seed);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient validation");
    double gc_tolerance = 1e-4;
    std::int64_t gc_max_coords = 0;
    gradcheck->add_option("--tolerance", gc_tolerance);
    gradcheck->add_option("--max-coords", gc_max_coords,
                          "coordinate budget per parameter (0 = all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitConfig;
    }

    try {
        const bool has_config = !config_path.empty() || !overrides.empty();
        std::optional<RunConfig> cfg;
        if (has_config || synth->parsed() || train->parsed())
            cfg = RunConfig::from_sources(config_path, overrides);

        if (synth->parsed()) return cmd_synth(*cfg, synth_out);
        if (train->parsed())
            return cmd_train(*cfg, train_data, train_variant, train_out, train_resume);
        if (generate->parsed())
            return cmd_generate(gen_ckpt, gen_features, gen_seed_motion, gen_speaker, gen_out,
                                gen_rng_seed, gen_sidecar, overrides);
        if (evaluate->parsed())
            return cmd_evaluate(eval_ckpt, eval_data, eval_out, eval_ae_holistic, eval_ae_face,
                                eval_fit_ae, eval_use_gt, eval_rng_seed, overrides);
        if (gradcheck->parsed())
            return cmd_gradcheck(cfg ? &*cfg : nullptr, gc_tolerance, gc_max_coords);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailure;
    }
    return kExitOk;
}
