#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mdan/checkpoint.hpp"
#include "mdan/metrics.hpp"
#include "mdan/pipeline.hpp"
#include "mdan/train.hpp"

namespace {

using namespace mdan;

struct SizeArg {
  int width = 0;
  int height = 0;
};

SizeArg parse_size(const std::string& s) {
  SizeArg out;
  char sep = 0;
  std::istringstream ss(s);
  if (!(ss >> out.width >> sep >> out.height) || (sep != 'x' && sep != 'X') ||
      out.width <= 0 || out.height <= 0 || !ss.eof()) {
    throw InputError("--size expects WxH, got '" + s + "'");
  }
  return out;
}

struct TrainFileConfig {
  MdanConfig model;
  TrainConfig train;
};

TrainFileConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("train config: cannot open '" + path + "'");
  TrainFileConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw InputError("train config " + path + ":" + std::to_string(lineno) +
                         ": expected key=value");
      continue;
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    try {
      if (key == "channels") cfg.model.channels = std::stoi(value);
      else if (key == "mdsa_blocks") cfg.model.mdsa_blocks = std::stoi(value);
      else if (key == "p") cfg.model.p = std::stoi(value);
      else if (key == "q") cfg.model.q = std::stoi(value);
      else if (key == "patch_size") cfg.train.patch_size = std::stoi(value);
      else if (key == "batch_size") cfg.train.batch_size = std::stoi(value);
      else if (key == "learning_rate") cfg.train.learning_rate = std::stod(value);
      else if (key == "steps") cfg.train.steps = std::stoi(value);
      else if (key == "seed") cfg.train.seed = std::stoull(value);
      else if (key == "beta1") cfg.train.beta1 = std::stod(value);
      else if (key == "beta2") cfg.train.beta2 = std::stod(value);
      else if (key == "epsilon") cfg.train.epsilon = std::stod(value);
      else
        throw InputError("train config " + path + ":" + std::to_string(lineno) +
                         ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw InputError("train config " + path + ":" + std::to_string(lineno) +
                       ": bad value for '" + key + "'");
    }
  }
  return cfg;
}

std::string fmt_num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

int cmd_degrade(const std::string& in, const SizeArg& size, int depth, int qp,
                const std::string& out) {
  const auto frames = read_yuv420(in, size.width, size.height, depth);
  std::vector<PlanarFrame> rec;
  rec.reserve(frames.size());
  for (const auto& f : frames) rec.push_back(simulate_compression(f, qp));
  write_yuv420(rec, out);
  std::cout << "degraded " << frames.size() << " frame(s) at qp " << qp << " -> " << out
            << "\n";
  return 0;
}

int cmd_train(const std::string& rec_path, const std::string& org_path, const SizeArg& size,
              int depth, int qp_band, const std::string& cfg_path, const std::string& out,
              const std::string& plane_class) {
  TrainFileConfig cfg = parse_train_config(cfg_path);
  cfg.train.qp_band = static_cast<std::uint32_t>(qp_band);
  const auto rec = read_yuv420(rec_path, size.width, size.height, depth);
  const auto org = read_yuv420(org_path, size.width, size.height, depth);
  if (rec.size() != org.size())
    throw InputError("train: sequences differ in length (" + std::to_string(rec.size()) +
                     " vs " + std::to_string(org.size()) + ")");
  std::vector<Tensor> rec_planes, org_planes;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (plane_class == "luma") {
      rec_planes.push_back(normalize_plane(rec[i].y, depth));
      org_planes.push_back(normalize_plane(org[i].y, depth));
    } else {
      rec_planes.push_back(normalize_plane(rec[i].u, depth));
      org_planes.push_back(normalize_plane(org[i].u, depth));
      rec_planes.push_back(normalize_plane(rec[i].v, depth));
      org_planes.push_back(normalize_plane(org[i].v, depth));
    }
  }
  const TrainResult result = train(cfg.model, cfg.train, rec_planes, org_planes, &std::cout);
  save_checkpoint(result.params, out);
  std::cout << "saved " << out << " after " << result.loss_history.size() << " step(s)\n";
  return 0;
}

int cmd_filter(const SequenceJob& job, const std::string& models) {
  const QpBandRegistry registry = QpBandRegistry::load(models);
  const FilterResult res = filter_sequence(job, registry);
  for (const auto& row : res.rows) {
    std::cout << "frame " << row.frame << " " << row.plane << " psnr_rec "
              << fmt_num(row.psnr_rec) << " psnr_filtered " << fmt_num(row.psnr_filtered)
              << " alpha " << fmt_num(row.alpha) << (row.degenerate ? " degenerate" : "")
              << "\n";
  }
  return 0;
}

int cmd_apply(const std::string& rec, const std::string& sidecar, const std::string& models,
              const std::string& out, const SizeArg& size, int depth, int qp) {
  const QpBandRegistry registry = QpBandRegistry::load(models);
  apply_sequence(rec, sidecar, out, size.width, size.height, depth, qp, registry);
  std::cout << "decoded " << out << "\n";
  return 0;
}

// CSV rows: qp,rate,psnr_y,psnr_u,psnr_v (one optional header line).
struct RdTable {
  std::vector<double> rate, y, u, v;
};

RdTable parse_rd_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("eval: cannot open '" + path + "'");
  RdTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 5)
      throw InputError("eval " + path + ":" + std::to_string(lineno) +
                       ": expected qp,rate,psnr_y,psnr_u,psnr_v");
    try {
      std::stod(fields[0]);
    } catch (const std::invalid_argument&) {
      if (lineno == 1) continue;  // header
      throw InputError("eval " + path + ":" + std::to_string(lineno) + ": bad qp field");
    }
    try {
      t.rate.push_back(std::stod(fields[1]));
      t.y.push_back(std::stod(fields[2]));
      t.u.push_back(std::stod(fields[3]));
      t.v.push_back(std::stod(fields[4]));
    } catch (const std::invalid_argument&) {
      throw InputError("eval " + path + ":" + std::to_string(lineno) + ": bad numeric field");
    }
  }
  if (t.rate.size() != 4)
    throw InputError("eval '" + path + "': expected 4 data rows, got " +
                     std::to_string(t.rate.size()));
  return t;
}

RDCurve curve_of(const RdTable& t, const std::vector<double>& psnr,
                 std::vector<std::string>& warnings) {
  std::vector<RDPoint> pts;
  for (std::size_t i = 0; i < t.rate.size(); ++i) pts.push_back({t.rate[i], psnr[i]});
  return RDCurve::from_points(std::move(pts), &warnings);
}

int cmd_eval(const std::string& anchor_path, const std::string& test_path) {
  const RdTable a = parse_rd_csv(anchor_path);
  const RdTable t = parse_rd_csv(test_path);
  std::vector<std::string> warnings;
  const RDCurve ay = curve_of(a, a.y, warnings), au = curve_of(a, a.u, warnings),
                av = curve_of(a, a.v, warnings);
  const RDCurve ty = curve_of(t, t.y, warnings), tu = curve_of(t, t.u, warnings),
                tv = curve_of(t, t.v, warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  const double ry = bd_rate(ay, ty), ru = bd_rate(au, tu), rv = bd_rate(av, tv);
  const double py = bd_psnr(ay, ty), pu = bd_psnr(au, tu), pv = bd_psnr(av, tv);
  std::cout << "BD-rate   Y " << fmt_num(ry) << "%  U " << fmt_num(ru) << "%  V "
            << fmt_num(rv) << "%  YUV(4:1:1) " << fmt_num(yuv_weighted(ry, ru, rv)) << "%\n";
  std::cout << "BD-PSNR   Y " << fmt_num(py) << " dB  U " << fmt_num(pu) << " dB  V "
            << fmt_num(pv) << " dB  YUV(4:1:1) " << fmt_num(yuv_weighted(py, pu, pv))
            << " dB\n";
  return 0;
}

int cmd_gradcheck(int channels, std::uint64_t seed, double tolerance) {
  MdanConfig cfg;
  cfg.channels = channels;
  cfg.mdsa_blocks = 1;
  const GradCheckReport report = gradient_check(cfg, tolerance, seed, 8);
  std::cout << "checked " << report.checked << " parameters\n";
  std::cout << "max relative error " << report.max_rel_error << " at " << report.worst_param
            << "\n";
  std::cout << (report.passed ? "PASS" : "FAIL") << " (tolerance " << tolerance << ")\n";
  return report.passed ? 0 : 3;
}

int cmd_info(const std::string& ckpt) {
  const MdanParams params = load_checkpoint(ckpt);
  const MdanConfig& cfg = params.cfg;
  std::cout << "checkpoint: " << ckpt << "\n";
  std::cout << "channels " << cfg.channels << ", mdsa_blocks " << cfg.mdsa_blocks << ", p "
            << cfg.p << ", q " << cfg.q << ", in_planes " << cfg.in_planes << ", qp_band "
            << params.qp_band << ", seed " << params.seed << "\n";

  const ParamCount pc = param_count(params);
  const auto section = [&](const std::string& label, const std::string& prefix) {
    long long w = 0, b = 0;
    for (const auto& row : pc.rows) {
      if (row.name.rfind(prefix, 0) == 0) {
        w += row.weights;
        b += row.biases;
      }
    }
    std::cout << "  " << label << ": " << w << " weights, " << b << " biases\n";
  };
  section("head", "head.");
  for (int i = 0; i < cfg.mdsa_blocks; ++i) {
    const std::string p = "body." + std::to_string(i) + ".";
    section("block " + std::to_string(i) + " full branch", p + "mdsa.full.");
    section("block " + std::to_string(i) + " half branch", p + "mdsa.half.");
    section("block " + std::to_string(i) + " attention", p + "mdsa.attn.");
    section("block " + std::to_string(i) + " fusion", p + "mdsa.fuse.");
    section("block " + std::to_string(i) + " post", p + "post.");
  }
  section("tail", "tail.");
  std::cout << "total: " << pc.weights << " weights, " << pc.biases << " biases, "
            << pc.total() << " parameters\n";

  const int r = cfg.fusion_reduction();
  const long long expect = static_cast<long long>(cfg.channels) * r * 3 +
                           static_cast<long long>(cfg.channels) * cfg.channels;
  for (int i = 0; i < cfg.mdsa_blocks; ++i) {
    const long long got = weights_with_prefix(pc, "body." + std::to_string(i) + ".mdsa.fuse.");
    std::cout << "fusion weights (block " << i << "): " << got << " (expected " << expect
              << (got == expect ? ", OK)" : ", MISMATCH)") << "\n";
    if (got != expect) return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MDAN loop filter: multi-density attention network with on-line scaling"};
  app.require_subcommand(1);

  std::string in_path, out_path, rec_path, org_path, sidecar_path, report_path;
  std::string models_path, config_path, ckpt_path, anchor_path, test_path, size_str;
  std::string plane_class = "luma";
  int depth = 8, qp = 32, qp_band = 32, channels = 8;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  bool scale = false;

  auto* degrade = app.add_subcommand("degrade", "simulate compression distortion");
  degrade->add_option("--in", in_path)->required();
  degrade->add_option("--size", size_str, "WxH")->required();
  degrade->add_option("--depth", depth)->check(CLI::IsMember({8, 10}));
  degrade->add_option("--qp", qp)->required();
  degrade->add_option("--out", out_path)->required();

  auto* train_cmd = app.add_subcommand("train", "train a model on rec/org pairs");
  train_cmd->add_option("--rec", rec_path)->required();
  train_cmd->add_option("--org", org_path)->required();
  train_cmd->add_option("--size", size_str, "WxH")->required();
  train_cmd->add_option("--depth", depth)->check(CLI::IsMember({8, 10}));
  train_cmd->add_option("--qp-band", qp_band)
      ->required()
      ->check(CLI::IsMember({22, 27, 32, 37, 42}));
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--out", out_path)->required();
  train_cmd->add_option("--plane", plane_class)->check(CLI::IsMember({"luma", "chroma"}));

  auto* filter = app.add_subcommand("filter", "filter a sequence (encoder side)");
  filter->add_option("--rec", rec_path)->required();
  filter->add_option("--org", org_path);
  filter->add_flag("--scale", scale, "derive and apply per-frame scaling factors");
  filter->add_option("--size", size_str, "WxH")->required();
  filter->add_option("--depth", depth)->check(CLI::IsMember({8, 10}));
  filter->add_option("--qp", qp)->required();
  filter->add_option("--models", models_path)->required();
  filter->add_option("--out", out_path)->required();
  filter->add_option("--sidecar", sidecar_path)->required();
  filter->add_option("--report", report_path);

  auto* apply = app.add_subcommand("apply", "reproduce filtering from rec + sidecar");
  apply->add_option("--rec", rec_path)->required();
  apply->add_option("--sidecar", sidecar_path)->required();
  apply->add_option("--models", models_path)->required();
  apply->add_option("--out", out_path)->required();
  apply->add_option("--size", size_str, "WxH")->required();
  apply->add_option("--depth", depth)->check(CLI::IsMember({8, 10}));
  apply->add_option("--qp", qp)->required();

  auto* eval = app.add_subcommand("eval", "BD-rate / BD-PSNR between two RD curves");
  eval->add_option("--anchor", anchor_path)->required();
  eval->add_option("--test", test_path)->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--channels", channels);
  gradcheck->add_option("--seed", seed);
  gradcheck->add_option("--tolerance", tolerance);

  auto* info = app.add_subcommand("info", "checkpoint configuration and parameter counts");
  info->add_option("--ckpt", ckpt_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (degrade->parsed())
      return cmd_degrade(in_path, parse_size(size_str), depth, qp, out_path);
    if (train_cmd->parsed())
      return cmd_train(rec_path, org_path, parse_size(size_str), depth, qp_band, config_path,
                       out_path, plane_class);
    if (filter->parsed()) {
      const SizeArg size = parse_size(size_str);
      SequenceJob job;
      job.rec_path = rec_path;
      job.org_path = org_path;
      job.out_path = out_path;
      job.sidecar_path = sidecar_path;
      job.report_path = report_path;
      job.width = size.width;
      job.height = size.height;
      job.bit_depth = depth;
      job.qp = qp;
      job.enable_scaling = scale;
      return cmd_filter(job, models_path);
    }
    if (apply->parsed())
      return cmd_apply(rec_path, sidecar_path, models_path, out_path, parse_size(size_str),
                       depth, qp);
    if (eval->parsed()) return cmd_eval(anchor_path, test_path);
    if (gradcheck->parsed()) return cmd_gradcheck(channels, seed, tolerance);
    if (info->parsed()) return cmd_info(ckpt_path);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
