#include "mvm/commands.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "json.hpp"
#include "mvm/checkpoint.hpp"
#include "mvm/config.hpp"
#include "mvm/optim.hpp"

namespace mvm {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Creates `dir`, or accepts an existing non-empty one only with `force`, in
/// which case stale checkpoints are removed.
void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) {
        throw ConfigError("output directory " + dir.string() + " is not empty; pass --force to overwrite");
      }
      for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("ckpt_", 0) == 0 && e.path().extension() == ".vmc") fs::remove(e.path());
      }
    }
  }
  fs::create_directories(dir);
}

void check_out_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) {
    throw ConfigError("output file " + file.string() + " exists; pass --force to overwrite");
  }
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_manifest(const fs::path& dir, const std::string& config_text, uint64_t seed,
                    const std::string& start, const nlohmann::ordered_json& outputs,
                    const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  nlohmann::ordered_json m;
  m["config"] = config_text;
  m["config_hash"] = content_hash(config_text);
  m["seed"] = seed;
  m["start"] = start;
  m["end"] = utc_now();
  m["outputs"] = outputs;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<Sequence> load_data(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("data directory " + root.string() + " does not exist");
  auto data = SequenceStore::open(root).load_all();
  if (data.empty()) throw DataError("no sequences found under " + root.string());
  return data;
}

std::string checkpoint_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06lld.vmc", static_cast<long long>(step));
  return buf;
}

}  // namespace

int run_guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

void cmd_gen_data(const GenDataOptions& o) {
  if (o.sequences < 1 || o.frames < 1) throw ConfigError("sequences and frames must be >= 1");
  if (o.patch < 1 || o.size < o.patch || o.size % o.patch != 0) {
    throw ConfigError("size " + std::to_string(o.size) + " is not divisible by patch size " +
                      std::to_string(o.patch));
  }
  prepare_out_dir(o.out, o.force);
  write_store(o.out, gen_synthetic(o.seed, o.sequences, o.frames, o.size));
}

void cmd_pretrain(const PretrainOptions& o, std::ostream& log) {
  const std::string start = utc_now();
  std::optional<Checkpoint> ck;
  if (o.resume) ck = load_checkpoint(*o.resume);

  RunConfig config;
  if (o.config) {
    config = load_run_config(*o.config, o.overrides);
    if (ck && format_run_config(config) != ck->config_text) {
      throw ConfigError("config differs from the checkpoint's config echo");
    }
  } else if (ck) {
    config = parse_run_config(ck->config_text, o.overrides);
    if (format_run_config(config) != ck->config_text) {
      throw ConfigError("overrides change the checkpoint's config");
    }
  } else {
    throw ConfigError("--config is required unless resuming");
  }
  const std::string config_text = format_run_config(config);

  auto data = load_data(o.data);
  prepare_out_dir(o.out, o.force);
  write_text(o.out / "config.cfg", config_text);

  Trainer trainer(config);
  if (ck) trainer.restore(std::move(ck->state));

  const int64_t total = config.train.total_steps();
  const int64_t stop = o.max_steps >= 0 ? std::min(total, o.max_steps) : total;
  const int64_t first_step = trainer.state().step;

  std::ofstream csv(o.out / "loss.csv", std::ios::binary | std::ios::trunc);
  if (!csv) throw DataError("cannot write " + (o.out / "loss.csv").string());
  csv << loss_csv_header();
  nlohmann::ordered_json outputs = nlohmann::ordered_json::array({"config.cfg", "loss.csv"});
  while (trainer.state().step < stop) {
    const double lr = trainer.current_lr();
    const LossReport r = trainer.step(data);
    const int64_t step = trainer.state().step;
    csv << loss_csv_row(step, r, lr);
    csv.flush();
    if (o.log_every > 0 && (step % o.log_every == 0 || step == stop)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "step %lld/%lld l_online %.5f l_target %.5f l_consistency %.5f lr %.3g\n",
                    static_cast<long long>(step), static_cast<long long>(total), r.l_online,
                    r.l_target, r.l_consistency, lr);
      log << buf << std::flush;
    }
    if (config.train.checkpoint_every > 0 && step % config.train.checkpoint_every == 0) {
      save_checkpoint(o.out / checkpoint_name(step), config_text, trainer.state());
      outputs.push_back(checkpoint_name(step));
    }
  }
  save_checkpoint(o.out / "final.vmc", config_text, trainer.state());
  outputs.push_back("final.vmc");

  nlohmann::ordered_json extra;
  extra["first_step"] = first_step;
  extra["last_step"] = trainer.state().step;
  if (o.resume) extra["resumed_from"] = o.resume->string();
  write_manifest(o.out, config_text, config.train.seed, start, outputs, extra);
}

void cmd_reconstruct(const ReconstructOptions& o) {
  const std::string start = utc_now();
  if (!(o.ratio >= 0.0 && o.ratio < 1.0)) {
    throw ConfigError("--ratio must lie in [0, 1), got " + std::to_string(o.ratio));
  }
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const RunConfig config = parse_run_config(ck.config_text);
  const MaskedConvAutoencoder model(config.model);
  const Tensor f1 = read_frame(o.frame1), f2 = read_frame(o.frame2);
  if (f1.shape() != f2.shape()) throw DataError("--pair frames differ in size");
  const int gh = model.grid_extent(f1.size(1)), gw = model.grid_extent(f1.size(2));
  const MaskGrid mask = sample_mask(gh, gw, o.ratio, o.seed);

  set_precision(config.train.precision);
  const Reconstruction r = reconstruct(model, ck.state.dual.online, stack_frames({f1, f2}),
                                       {mask, mask}, config.train.norm_pix_loss);
  prepare_out_dir(o.out, o.force);
  const int64_t per = f1.numel();
  auto frame_at = [&](const Tensor& batch, int64_t i) {
    std::vector<double> v(batch.values().begin() + i * per, batch.values().begin() + (i + 1) * per);
    return Tensor::from(f1.shape(), std::move(v));
  };
  nlohmann::ordered_json outputs = nlohmann::ordered_json::array();
  for (int64_t i = 0; i < 2; ++i) {
    const std::string idx = std::to_string(i + 1);
    write_frame(o.out / ("masked_" + idx + ".ppm"), frame_at(r.masked_input, i));
    write_frame(o.out / ("recon_" + idx + ".ppm"), frame_at(r.reconstruction, i));
    outputs.push_back("masked_" + idx + ".ppm");
    outputs.push_back("recon_" + idx + ".ppm");
  }
  nlohmann::ordered_json extra;
  extra["ratio"] = o.ratio;
  extra["masked_patches"] = mask.masked_count();
  extra["mask_seed"] = o.seed;
  write_manifest(o.out, ck.config_text, o.seed, start, outputs, extra);
}

EvalSummary cmd_eval(const EvalOptions& o) {
  if (o.random_init == o.ckpt.has_value()) {
    throw ConfigError("pass exactly one of --ckpt and --random-init");
  }
  if (o.branch != "online" && o.branch != "target") {
    throw ConfigError("--branch must be online or target");
  }
  RunConfig config;
  ParamSet params;
  if (o.ckpt) {
    Checkpoint ck = load_checkpoint(*o.ckpt);
    config = parse_run_config(ck.config_text);
    params = o.branch == "online" ? ck.state.dual.online : ck.state.dual.target;
  } else {
    if (!o.config) throw ConfigError("--random-init needs --config");
    config = load_run_config(*o.config, o.overrides);
  }
  const MaskedConvAutoencoder model(config.model);
  if (o.random_init) {
    Rng rng(config.train.seed);
    params = model.init_params(rng);
  }
  o.propagation.validate(config.model.encoder.num_stages());
  check_out_file(o.out, o.force);
  const auto data = load_data(o.data);
  set_precision(config.train.precision);
  EvalSummary summary = evaluate_dataset(model, params, data, o.propagation);
  write_text(o.out, format_eval_jsonl(summary));
  return summary;
}

}  // namespace mvm
