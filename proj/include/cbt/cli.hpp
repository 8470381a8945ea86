#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cbt/checkpoint.hpp"
#include "cbt/config.hpp"
#include "cbt/data.hpp"
#include "cbt/evaluation.hpp"
#include "cbt/training.hpp"

// Command-line front end. Exit codes: 0 success, 1 usage or validation
// error, 2 runtime error.
namespace cbt::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

struct DataFlags {
  std::string data;
  int test_per_domain = 0;
  std::string aggregation;

  void add(CLI::App* c, bool required, int default_test) {
    test_per_domain = default_test;
    auto* o = c->add_option("--data", data, "dataset root with one subdirectory per domain")->check(CLI::ExistingDirectory);
    if (required) o->required();
    c->add_option("--test-per-domain", test_per_domain, "images per domain reserved for the test split")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    c->add_option("--aggregation", aggregation, "coarse-domain aggregation file (pattern -> coarse_name)")
        ->check(CLI::ExistingFile);
  }

  DatasetManifest load() const {
    DatasetManifest m = scan_dataset(data, test_per_domain);
    if (!aggregation.empty()) m = apply_aggregation(m, load_aggregation(aggregation));
    return m;
  }
};

// Applies `key=value` overrides in order.
inline void apply_overrides(TrainConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, config_detail::trim(std::string_view(kv).substr(0, eq)),
                     config_detail::trim(std::string_view(kv).substr(eq + 1)));
  }
}

inline std::vector<fs::path> image_inputs(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw ValidationError("no image files in " + p.string());
  } else {
    if (!fs::exists(p)) throw ValidationError("input does not exist: " + p.string());
    out.push_back(p);
  }
  return out;
}

inline nlohmann::json help_json(const CLI::App& app) {
  using nlohmann::json;
  json cmds = json::object();
  for (const CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    json flags = json::array();
    for (const CLI::Option* o : sub->get_options()) {
      if (o->get_name() == "--help" || o->get_name().empty()) continue;
      flags.push_back(json{{"name", o->get_name()},
                           {"type", o->get_type_name()},
                           {"required", o->get_required()},
                           {"repeatable", o->get_expected_max() > 1 || o->get_multi_option_policy() == CLI::MultiOptionPolicy::TakeAll},
                           {"default", o->get_default_str()},
                           {"description", o->get_description()}});
    }
    cmds[sub->get_name()] = json{{"description", sub->get_description()}, {"flags", flags}};
  }
  return json{{"program", app.get_name()}, {"exit_codes", {{"0", "success"}, {"1", "usage or validation error"}, {"2", "runtime error"}}},
              {"commands", cmds}};
}

// Parses and runs one invocation.
inline int run(const std::vector<std::string>& args, Streams io) {
  CLI::App app{"Content-bottleneck multimodal image-to-image translation", "cbt"};
  app.require_subcommand(0, 1);
  bool help_json_flag = false;
  app.add_flag("--help-json", help_json_flag, "print the flag schema of every command as JSON");

  // make-synthetic
  auto* mk = app.add_subcommand("make-synthetic", "render the synthetic shapes dataset and its factor ledger");
  SyntheticFactorSpec syn;
  std::string mk_out;
  mk->add_option("--out", mk_out, "output directory")->required();
  mk->add_option("--domains", syn.num_domains, "number of domains")->capture_default_str()->check(CLI::PositiveNumber);
  mk->add_option("--size", syn.image_size, "image side in pixels")->capture_default_str()->check(CLI::Range(8, 4096));
  mk->add_option("--per-domain", syn.samples_per_domain, "images per domain")->capture_default_str()->check(CLI::NonNegativeNumber);
  mk->add_option("--seed", syn.seed, "generation seed")->capture_default_str();

  // scan
  auto* sc = app.add_subcommand("scan", "list the domains and split sizes of a dataset");
  DataFlags sc_data;
  sc_data.add(sc, true, 0);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  DataFlags tr_data;
  tr_data.add(tr, true, 0);
  std::string tr_config, tr_out, tr_resume;
  std::vector<std::string> tr_sets;
  std::optional<std::int64_t> tr_seed;
  tr->add_option("--config", tr_config, "config file (key = value)")->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  tr->add_option("--set", tr_sets, "override one config key, key=value (repeatable)")->take_all();
  tr->add_option("--seed", tr_seed, "root seed (overrides the config)");
  int tr_log_every = 50;
  tr->add_option("--log-every", tr_log_every, "log losses to stderr every N steps")->capture_default_str()->check(CLI::PositiveNumber);

  // translate
  auto* tl = app.add_subcommand("translate", "translate images with a trained checkpoint");
  std::string tl_ckpt, tl_input, tl_mode = "reference", tl_ref, tl_out;
  std::optional<std::uint64_t> tl_seed;
  int tl_target = 0;
  tl->add_option("--ckpt", tl_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  tl->add_option("--input", tl_input, "input image or directory of images")->required();
  tl->add_option("--mode", tl_mode, "reference or sample")->capture_default_str()->check(CLI::IsMember({"reference", "sample"}));
  tl->add_option("--ref", tl_ref, "reference image (reference mode)")->check(CLI::ExistingFile);
  tl->add_option("--seed", tl_seed, "latent seed (sample mode, default 0)");
  tl->add_option("--target", tl_target, "target domain index")->required();
  tl->add_option("--out", tl_out, "output PNG for one input, or output directory")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "LPIPS diversity and FID sweep over domain pairs");
  DataFlags ev_data;
  ev_data.add(ev, true, 50);
  std::string ev_ckpt, ev_out, ev_extractor = "random_conv";
  EvalConfig ev_cfg;
  bool ev_probe = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "output directory for metrics.jsonl and metrics_table.txt")->required();
  ev->add_option("--repeats", ev_cfg.num_repeats, "translations per input and strategy")->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--seed", ev_cfg.seed, "evaluation seed")->capture_default_str();
  ev->add_option("--max-inputs", ev_cfg.max_inputs_per_domain, "cap on test inputs per source domain (0 = all)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  ev->add_option("--extractor", ev_extractor, "feature extractor: random_conv or pixels")->capture_default_str()
      ->check(CLI::IsMember({"random_conv", "pixels"}));
  ev->add_flag("--same-domain", ev_cfg.include_same_domain, "also evaluate source = target cells");
  ev->add_flag("--probe", ev_probe, "include the content-leakage probe");

  // probe
  auto* pr = app.add_subcommand("probe", "content-leakage probe: domain classification from content codes");
  DataFlags pr_data;
  pr_data.add(pr, true, 50);
  std::string pr_ckpt;
  ProbeConfig pr_cfg;
  pr->add_option("--ckpt", pr_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  pr->add_option("--iterations", pr_cfg.iterations, "gradient-descent iterations")->capture_default_str()->check(CLI::PositiveNumber);

  // grid
  auto* gr = app.add_subcommand("grid", "write a content x style comparison grid PNG");
  DataFlags gr_data;
  gr_data.add(gr, true, 0);
  std::string gr_ckpt, gr_out;
  int gr_contents = 4, gr_styles = 4;
  std::uint64_t gr_seed = 0;
  gr->add_option("--ckpt", gr_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  gr->add_option("--out", gr_out, "output PNG")->required();
  gr->add_option("--contents", gr_contents, "content images (columns)")->capture_default_str()->check(CLI::PositiveNumber);
  gr->add_option("--styles", gr_styles, "style references (rows)")->capture_default_str()->check(CLI::PositiveNumber);
  gr->add_option("--seed", gr_seed, "image selection seed")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : app.get_subcommands()) sub = s;
    io.err << "error: " << e.what() << "\n\n" << (sub != nullptr ? sub->help() : app.help());
    return kExitUsage;
  }
  if (help_json_flag) {
    io.out << help_json(app).dump(2) << "\n";
    return kExitOk;
  }
  if (app.get_subcommands().empty()) {
    io.err << "error: a command is required\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (mk->parsed()) {
      const auto ds = generate_synthetic(syn, mk_out);
      io.err << "wrote " << ds.ledger.size() << " images to " << mk_out << "\n";
    } else if (sc->parsed()) {
      const auto m = sc_data.load();
      for (int d = 0; d < m.num_domains(); ++d)
        io.out << d << "\t" << m.domains[d] << "\ttrain=" << m.indices(Split::train, d).size()
               << "\ttest=" << m.indices(Split::test, d).size() << "\n";
    } else if (tr->parsed()) {
      TrainConfig cfg = tr_config.empty() ? TrainConfig{} : load_config(tr_config);
      apply_overrides(cfg, tr_sets);
      if (tr_seed) cfg.seed = *tr_seed;
      validate(cfg);
      const auto m = tr_data.load();
      RunOptions opt;
      if (!tr_resume.empty()) opt.resume_from = fs::path(tr_resume);
      opt.on_step = [&](std::int64_t step, const LossReport& r) {
        if (step % tr_log_every == 0 || step == cfg.total_steps)
          io.err << "step " << step << " rec " << r.rec << " adv_g " << r.adv_g << " adv_d " << r.adv_d << " cb " << r.cb
                 << " total_g " << r.total_g << " total_d " << r.total_d << "\n";
      };
      const auto c = run_training(cfg, m, tr_out, opt);
      io.err << "finished at step " << c.step << "\n";
    } else if (tl->parsed()) {
      if (tl_mode == "reference" && tl_seed) throw UsageError("--seed conflicts with reference mode (ambiguous)");
      if (tl_mode == "reference" && tl_ref.empty()) throw UsageError("reference mode requires --ref");
      if (tl_mode == "sample" && !tl_ref.empty()) throw UsageError("--ref conflicts with sample mode (ambiguous)");
      const Checkpoint ck = load_checkpoint(tl_ckpt);
      const NetworkTranslator model(ck);
      const int size = static_cast<int>(ck.config.image_size);
      DomainLabel::checked(tl_target, ck.config.num_domains);
      const auto inputs = image_inputs(tl_input);
      const bool many = fs::is_directory(tl_input);
      std::optional<Image> ref;
      if (!tl_ref.empty()) ref = load_image(tl_ref, size);
      for (const auto& in : inputs) {
        const Image x = load_image(in, size);
        Image y;
        if (ref) {
          y = model.reference(x, *ref, DomainLabel{tl_target});
        } else {
          RngStream rng(tl_seed.value_or(0), "translate");
          y = model.sampling(x, DomainLabel{tl_target}, sample_latent(model.latent_dim(), rng));
        }
        const fs::path dst = many ? fs::path(tl_out) / (in.stem().string() + "_to" + std::to_string(tl_target) + ".png")
                                  : fs::path(tl_out);
        save_image(y, dst);
      }
      io.err << "translated " << inputs.size() << " image(s)\n";
    } else if (ev->parsed()) {
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      const NetworkTranslator model(ck);
      const auto m = ev_data.load();
      ev_cfg.image_size = static_cast<int>(ck.config.image_size);
      const auto fx = make_extractor(ev_extractor, ev_cfg.seed);
      MetricsReport rep = run_evaluation(model, m, ev_cfg, *fx);
      rep.checkpoint_id = fs::path(ev_ckpt).filename().string() + "@step" + std::to_string(ck.step);
      if (ev_probe) rep.leakage = leakage_probe(model, m, ev_cfg.image_size);
      fs::create_directories(ev_out);
      std::ofstream(fs::path(ev_out) / "metrics.jsonl") << metrics_to_jsonl(rep);
      std::ofstream(fs::path(ev_out) / "metrics_table.txt") << metrics_table(rep);
      io.out << metrics_table(rep);
    } else if (pr->parsed()) {
      const Checkpoint ck = load_checkpoint(pr_ckpt);
      const auto m = pr_data.load();
      if (m.num_domains() < 2) throw ValidationError("leakage probe needs a manifest with at least 2 domains");
      const auto r = leakage_probe(NetworkTranslator(ck), m, static_cast<int>(ck.config.image_size), pr_cfg);
      io.out << "accuracy " << r.accuracy << "\nchance " << r.chance << "\n";
    } else if (gr->parsed()) {
      const Checkpoint ck = load_checkpoint(gr_ckpt);
      const NetworkTranslator model(ck);
      const auto m = gr_data.load();
      const int size = static_cast<int>(ck.config.image_size);
      RngStream rng(gr_seed, "grid");
      auto pick = [&](std::vector<Image>& imgs, std::vector<int>* labels, int n) {
        auto pool = m.indices(Split::test);
        if (pool.empty()) pool = m.indices(Split::train);
        for (int i = 0; i < n; ++i) {
          const auto& e = m.entries[static_cast<std::size_t>(pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))])];
          imgs.push_back(load_image(m.root / e.path, size));
          if (labels != nullptr) labels->push_back(e.label.index);
        }
      };
      std::vector<Image> contents, styles;
      std::vector<int> labels;
      pick(contents, nullptr, gr_contents);
      pick(styles, &labels, gr_styles);
      save_image(translation_grid(model, contents, styles, labels), gr_out);
    }
  } catch (const UsageError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IndexError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

inline int run(int argc, char** argv, Streams io = {std::cout, std::cerr}) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, io);
}

}  // namespace cbt::cli
