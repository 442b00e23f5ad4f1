#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "io.hpp"
#include "sheafpc/experiments.hpp"
#include "sheafpc/version.hpp"

namespace sheafpc::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const json* find(const json& j, const char* key) {
  if (!j.is_object()) return nullptr;
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

const json& require(const json& j, const char* key, const std::string& where) {
  const json* v = find(j, key);
  if (!v) throw std::invalid_argument("missing field '" + std::string(key) + "' in " + where);
  return *v;
}

double num_or(const json& j, const char* key, double def, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_number())
    throw std::invalid_argument("field '" + std::string(key) + "' in " + where + " must be a number");
  return v->get<double>();
}

int int_or(const json& j, const char* key, int def, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_number_integer())
    throw std::invalid_argument("field '" + std::string(key) + "' in " + where + " must be an integer");
  return v->get<int>();
}

std::uint64_t seed_or(const json& j, const char* key, std::uint64_t def, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
    throw std::invalid_argument("field '" + std::string(key) + "' in " + where +
                                " must be a non-negative integer");
  return v->get<std::uint64_t>();
}

std::string str_or(const json& j, const char* key, const std::string& def, const std::string& where) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_string())
    throw std::invalid_argument("field '" + std::string(key) + "' in " + where + " must be a string");
  return v->get<std::string>();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + p.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---------------------------------------------------------------- networks

struct NetworkConfig {
  enum class Kind { file, inline_net, chain, knotted, all_to_all } kind;
  fs::path path;
  json inline_net;
  std::vector<Index> dims;
  std::vector<Matrix<double>> weights;
  KnottedSpec knotted;
  AllToAllSpec all_to_all;
};

NetworkConfig parse_network(const json& cfg, const fs::path& base_dir) {
  const json& j = require(cfg, "network", "config");
  NetworkConfig nc;
  const std::string type = str_or(j, "type", "", "network");
  if (type == "file") {
    nc.kind = NetworkConfig::Kind::file;
    fs::path p = require(j, "path", "network").get<std::string>();
    nc.path = p.is_absolute() ? p : base_dir / p;
  } else if (type == "inline") {
    nc.kind = NetworkConfig::Kind::inline_net;
    nc.inline_net = j;
  } else if (type == "chain") {
    nc.kind = NetworkConfig::Kind::chain;
    const json& dims = require(j, "dims", "chain network");
    if (!dims.is_array() || dims.size() < 2)
      throw std::invalid_argument("chain network: 'dims' must list at least two stalk dims");
    for (const auto& d : dims) {
      if (!d.is_number_integer() || d.get<Index>() <= 0)
        throw std::invalid_argument("chain network: dims must be positive integers");
      nc.dims.push_back(d.get<Index>());
    }
    const json& ws = require(j, "weights", "chain network");
    if (!ws.is_array() || ws.size() + 1 != dims.size())
      throw std::invalid_argument("chain network: need one weight per consecutive vertex pair");
    for (std::size_t k = 0; k < ws.size(); ++k)
      nc.weights.push_back(io::matrix_from_json(ws[k], "chain weight " + std::to_string(k)));
  } else if (type == "knotted") {
    nc.kind = NetworkConfig::Kind::knotted;
    nc.knotted.layers = int_or(j, "layers", 10, "knotted network");
    nc.knotted.stalk_dim = int_or(j, "stalk_dim", 2, "knotted network");
    nc.knotted.theta = num_or(j, "theta", 0.0, "knotted network");
    nc.knotted.seed = seed_or(j, "seed", 0, "knotted network");
  } else if (type == "all_to_all") {
    nc.kind = NetworkConfig::Kind::all_to_all;
    nc.all_to_all.n_hidden = int_or(j, "n_hidden", 4, "all_to_all network");
    nc.all_to_all.hidden_dim = int_or(j, "hidden_dim", 4, "all_to_all network");
    nc.all_to_all.io_dim = int_or(j, "io_dim", 2, "all_to_all network");
    nc.all_to_all.seed = seed_or(j, "seed", 0, "all_to_all network");
  } else {
    throw std::invalid_argument("network: unknown type '" + type +
                                "' (expected file, inline, chain, knotted, or all_to_all)");
  }
  return nc;
}

PCSheaf<double> build_network(const NetworkConfig& nc, std::optional<std::uint64_t> seed_override) {
  switch (nc.kind) {
    case NetworkConfig::Kind::file:
      return io::load_sheaf(nc.path);
    case NetworkConfig::Kind::inline_net:
      return io::sheaf_from_json(nc.inline_net);
    case NetworkConfig::Kind::chain:
      return make_chain<double>(nc.dims, nc.weights);
    case NetworkConfig::Kind::knotted: {
      KnottedSpec s = nc.knotted;
      if (seed_override) s.seed = *seed_override;
      return make_knotted<double>(s);
    }
    case NetworkConfig::Kind::all_to_all: {
      AllToAllSpec s = nc.all_to_all;
      if (seed_override) s.seed = *seed_override;
      return make_all_to_all<double>(s);
    }
  }
  throw std::logic_error("unreachable network kind");
}

// ---------------------------------------------------------------- protocol

UpdateRule parse_rule(const std::string& s, const std::string& where) {
  if (s == "plain") return UpdateRule::plain;
  if (s == "gauss_newton") return UpdateRule::gauss_newton;
  if (s == "scalar_spectral") return UpdateRule::scalar_spectral;
  throw std::invalid_argument(where + ": unknown update rule '" + s +
                              "' (expected plain, gauss_newton, or scalar_spectral)");
}

Protocol parse_protocol(const json& cfg, std::uint64_t& seed) {
  Protocol p;
  seed = 0;
  const json* j = find(cfg, "protocol");
  if (!j) return p;
  const std::string where = "protocol";
  p.learning_rate = num_or(*j, "learning_rate", p.learning_rate, where);
  p.steps = int_or(*j, "steps", p.steps, where);
  p.batch_size = int_or(*j, "batch_size", p.batch_size, where);
  p.val_batch_size = int_or(*j, "val_batch_size", p.val_batch_size, where);
  p.noise_std = num_or(*j, "noise_std", p.noise_std, where);
  p.mse_threshold = num_or(*j, "mse_threshold", p.mse_threshold, where);
  p.rule = parse_rule(str_or(*j, "rule", "plain", where), where);
  p.rank_tol = num_or(*j, "rank_tol", p.rank_tol, where);
  seed = seed_or(*j, "seed", 0, where);
  if (const json* gn = find(*j, "gn")) {
    p.gn.gamma = num_or(*gn, "gamma", p.gn.gamma, "protocol.gn");
    p.gn.epsilon = num_or(*gn, "epsilon", p.gn.epsilon, "protocol.gn");
    p.gn.sigma2 = num_or(*gn, "sigma2", p.gn.sigma2, "protocol.gn");
    p.gn.probes = int_or(*gn, "probes", p.gn.probes, "protocol.gn");
    p.gn.tikhonov = num_or(*gn, "tikhonov", p.gn.tikhonov, "protocol.gn");
  }
  if (const json* t = find(cfg, "trainable_edges")) {
    if (!t->is_array()) throw std::invalid_argument("'trainable_edges' must be an array of edge ids");
    for (const auto& e : *t) p.trainable_edges.push_back(e.get<std::string>());
  }
  return p;
}

int env_threads() {
  const char* env = std::getenv("SHEAFPC_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v <= 0)
    throw std::invalid_argument("SHEAFPC_THREADS must be a positive integer, got '" +
                                std::string(env) + "'");
  return int(v);
}

// --------------------------------------------------------------- manifest

struct Manifest {
  std::string command;
  fs::path config;
  std::optional<std::uint64_t> seed_override;
  std::vector<std::uint64_t> seeds;
  std::string started;
  std::vector<std::string> outputs;
};

void write_manifest(const fs::path& out_dir, const Manifest& m) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "fnv1a64:%016llx",
                static_cast<unsigned long long>(io::fnv1a64(read_file(m.config))));
  json j{{"tool", "sheafpc"},
         {"version", kVersion},
         {"command", m.command},
         {"config", fs::absolute(m.config).string()},
         {"config_hash", hash},
         {"seed_override", m.seed_override ? json(*m.seed_override) : json(nullptr)},
         {"seeds", m.seeds},
         {"started", m.started},
         {"finished", io::iso8601_utc_now()},
         {"outputs", m.outputs}};
  io::write_text_atomic(out_dir / "manifest.json", j.dump(2) + "\n");
}

void append_cell(std::string& row, const std::string& cell, bool last) {
  row += cell;
  row += last ? '\n' : ',';
}

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

// Training metrics in long form, one row per (step, id).
std::string edge_metrics_csv(const TrainResult<double>& r) {
  std::string body = "step,edge_id,harmonic_load,grad_fro\n";
  for (const auto& m : r.metrics) {
    for (std::size_t k = 0; k < r.edge_ids.size(); ++k) {
      append_cell(body, std::to_string(m.step), false);
      append_cell(body, r.edge_ids[k], false);
      append_cell(body, io::g17(m.harmonic_load[k]), false);
      append_cell(body, io::g17(m.gradient_norm[k]), true);
    }
  }
  return body;
}

std::string vertex_metrics_csv(const TrainResult<double>& r) {
  std::string body = "step,vertex_id,diffusive_activation\n";
  for (const auto& m : r.metrics) {
    for (std::size_t k = 0; k < r.free_vertex_ids.size(); ++k) {
      append_cell(body, std::to_string(m.step), false);
      append_cell(body, r.free_vertex_ids[k], false);
      append_cell(body, io::g17(m.diffusive_activation[k]), true);
    }
  }
  return body;
}

std::string val_mse_csv(const TrainResult<double>& r) {
  std::string body = "step,val_mse\n";
  for (const auto& m : r.metrics) {
    append_cell(body, std::to_string(m.step), false);
    append_cell(body, io::g17(m.val_mse), true);
  }
  return body;
}

json summary_json(const RunSummary& s) {
  return json{{"converged", s.converged},
              {"first_step_below_threshold",
               s.first_step_below_threshold ? json(*s.first_step_below_threshold) : json(nullptr)},
              {"final_mse", finite_or_null(s.final_mse)},
              {"kappa_at_init", finite_or_null(s.kappa_at_init)}};
}

}  // namespace

void run_diagnose(const CommonArgs& args) {
  Manifest man{"diagnose", args.config, args.seed, {}, io::iso8601_utc_now(), {}};
  const json cfg = io::load_json(args.config);
  const PCSheaf<double> net =
      build_network(parse_network(cfg, args.config.parent_path()), std::nullopt);

  const json* cl = find(cfg, "clamp");
  const VertexId input = cl ? str_or(*cl, "input", "x", "clamp") : "x";
  const VertexId output = cl ? str_or(*cl, "output", "y", "clamp") : "y";
  const double rank_tol = num_or(cfg, "rank_tol", 1e-10, "config");

  const json* bj = find(cfg, "batch");
  const int size = bj ? int_or(*bj, "size", 128, "batch") : 128;
  const double noise = bj ? num_or(*bj, "noise_std", 0.0, "batch") : 0.0;
  std::uint64_t seed = bj ? seed_or(*bj, "seed", 0, "batch") : 0;
  if (args.seed) seed = *args.seed;
  man.seeds = {seed};

  if (net.vertex_dim(input) != net.vertex_dim(output))
    throw std::invalid_argument("diagnose: input and output stalks must have equal dims");

  ClampSpec<double> zeros;
  zeros.values[input] = Vector<double>::Zero(net.vertex_dim(input));
  zeros.values[output] = Vector<double>::Zero(net.vertex_dim(output));
  const RelativeSystem<double> rel = clamp(net, zeros);
  const BatchSample<double> sample = sample_batch(size, net.vertex_dim(input), noise, seed);
  const BatchStats<double> st = batch_statistics(
      rel, std::map<VertexId, Matrix<double>>{{input, sample.inputs}, {output, sample.targets}},
      rank_tol);
  const SpectralReport<double> spec = spectral_report(rel, rank_tol);

  std::string edges = "step,edge_id,harmonic_load,grad_fro\n";
  for (std::size_t k = 0; k < st.edge_ids.size(); ++k) {
    append_cell(edges, "0", false);
    append_cell(edges, st.edge_ids[k], false);
    append_cell(edges, io::g17(st.harmonic_load[k]), false);
    append_cell(edges, io::g17(st.gradient_sum[k].norm() / double(st.batch_size)), true);
  }
  std::string verts = "step,vertex_id,diffusive_activation\n";
  for (std::size_t k = 0; k < st.free_vertex_ids.size(); ++k) {
    append_cell(verts, "0", false);
    append_cell(verts, st.free_vertex_ids[k], false);
    append_cell(verts, io::g17(st.diffusive_activation[k]), true);
  }
  const json coh{{"h0_dim", h0_basis(net, rank_tol).cols()},
                 {"h1_dim", h1_dim(net, rank_tol)},
                 {"lambda_min_plus", finite_or_null(spec.lambda_min_plus)},
                 {"lambda_max", finite_or_null(spec.lambda_max)},
                 {"kappa", finite_or_null(spec.kappa)}};

  io::write_text_atomic(args.out / "edge_metrics.csv", edges);
  io::write_text_atomic(args.out / "vertex_metrics.csv", verts);
  io::write_text_atomic(args.out / "cohomology.json", coh.dump(2) + "\n");
  man.outputs = {"edge_metrics.csv", "vertex_metrics.csv", "cohomology.json"};
  write_manifest(args.out, man);
}

void run_train(const CommonArgs& args) {
  Manifest man{"train", args.config, args.seed, {}, io::iso8601_utc_now(), {}};
  const json cfg = io::load_json(args.config);
  const PCSheaf<double> net =
      build_network(parse_network(cfg, args.config.parent_path()), std::nullopt);
  std::uint64_t seed = 0;
  const Protocol p = parse_protocol(cfg, seed);
  if (args.seed) seed = *args.seed;
  man.seeds = {seed};

  const ProtocolRun run = run_identity_protocol(net, p, seed);

  io::write_text_atomic(args.out / "edge_metrics.csv", edge_metrics_csv(run.train));
  io::write_text_atomic(args.out / "vertex_metrics.csv", vertex_metrics_csv(run.train));
  io::write_text_atomic(args.out / "val_mse.csv", val_mse_csv(run.train));
  io::write_text_atomic(args.out / "summary.json", summary_json(run.summary).dump(2) + "\n");
  io::save_sheaf(run.train.sheaf, args.out / "network_trained.json");
  man.outputs = {"edge_metrics.csv", "vertex_metrics.csv", "val_mse.csv", "summary.json",
                 "network_trained.json"};
  write_manifest(args.out, man);
}

void run_sweep(const CommonArgs& args) {
  Manifest man{"sweep", args.config, args.seed, {}, io::iso8601_utc_now(), {}};
  const json cfg = io::load_json(args.config);
  const json& sw = require(cfg, "sweep", "config");
  const std::string axis = str_or(sw, "axis", "", "sweep");
  const json& points = require(sw, "points", "sweep");
  if (!points.is_array() || points.empty())
    throw std::invalid_argument("sweep: 'points' must be a non-empty array");

  std::vector<std::uint64_t> seeds;
  if (args.seed) {
    seeds = {*args.seed};
  } else if (const json* sj = find(sw, "seeds")) {
    if (!sj->is_array() || sj->empty())
      throw std::invalid_argument("sweep: 'seeds' must be a non-empty array");
    for (const auto& s : *sj) seeds.push_back(s.get<std::uint64_t>());
  } else {
    seeds = {0};
  }
  man.seeds = seeds;

  std::uint64_t proto_seed = 0;  // per-run seeds come from the sweep's seed list
  const Protocol p = parse_protocol(cfg, proto_seed);
  const NetworkConfig nc = parse_network(cfg, args.config.parent_path());
  const int threads = env_threads();

  std::vector<SweepEntry> entries;
  if (axis == "theta") {
    if (nc.kind != NetworkConfig::Kind::knotted)
      throw std::invalid_argument("sweep over theta needs a knotted network template");
    std::vector<double> thetas;
    for (const auto& v : points) thetas.push_back(v.get<double>());
    entries = sweep_theta(thetas, nc.knotted, p, seeds, threads);
  } else if (axis == "size") {
    if (nc.kind != NetworkConfig::Kind::all_to_all)
      throw std::invalid_argument("sweep over size needs an all_to_all network template");
    std::vector<int> sizes;
    for (const auto& v : points) {
      if (!v.is_number_integer() || v.get<int>() < 1)
        throw std::invalid_argument("sweep: sizes must be positive integers");
      sizes.push_back(v.get<int>());
    }
    entries = sweep_size(sizes, nc.all_to_all, p, seeds, threads);
  } else {
    throw std::invalid_argument("sweep: unknown axis '" + axis + "' (expected theta or size)");
  }

  std::string body = "point,seed,converged,first_step,final_mse,kappa\n";
  for (const auto& e : entries) {
    append_cell(body, io::g17(e.point), false);
    append_cell(body, std::to_string(e.seed), false);
    append_cell(body, e.summary.converged ? "true" : "false", false);
    append_cell(body,
                e.summary.first_step_below_threshold
                    ? std::to_string(*e.summary.first_step_below_threshold)
                    : "",
                false);
    append_cell(body, io::g17(e.summary.final_mse), false);
    append_cell(body, io::g17(e.summary.kappa_at_init), true);
  }
  io::write_text_atomic(args.out / "sweep.csv", body);
  man.outputs = {"sweep.csv"};
  write_manifest(args.out, man);
}

void run_spectrum(const CommonArgs& args) {
  Manifest man{"spectrum", args.config, args.seed, {}, io::iso8601_utc_now(), {}};
  const json cfg = io::load_json(args.config);
  const NetworkConfig nc = parse_network(cfg, args.config.parent_path());
  const json* cl = find(cfg, "clamp");
  const VertexId input = cl ? str_or(*cl, "input", "x", "clamp") : "x";
  const VertexId output = cl ? str_or(*cl, "output", "y", "clamp") : "y";
  const double rank_tol = num_or(cfg, "rank_tol", 1e-10, "config");

  const auto report_for = [&](const PCSheaf<double>& net) {
    ClampSpec<double> zeros;
    zeros.values[input] = Vector<double>::Zero(net.vertex_dim(input));
    zeros.values[output] = Vector<double>::Zero(net.vertex_dim(output));
    return spectral_report(clamp(net, zeros), rank_tol);
  };

  std::string spectrum, kappa;
  if (const json* thetas = find(cfg, "thetas")) {
    if (nc.kind != NetworkConfig::Kind::knotted)
      throw std::invalid_argument("spectrum over thetas needs a knotted network template");
    if (!thetas->is_array() || thetas->empty())
      throw std::invalid_argument("'thetas' must be a non-empty array");
    spectrum = "theta,index,eigenvalue\n";
    kappa = "theta,lambda_min_plus,lambda_max,kappa\n";
    for (const auto& tj : *thetas) {
      KnottedSpec spec = nc.knotted;
      spec.theta = tj.get<double>();
      if (args.seed) spec.seed = *args.seed;
      const SpectralReport<double> rep = report_for(make_knotted<double>(spec));
      for (Index i = 0; i < rep.eigenvalues.size(); ++i) {
        append_cell(spectrum, io::g17(spec.theta), false);
        append_cell(spectrum, std::to_string(i), false);
        append_cell(spectrum, io::g17(rep.eigenvalues(i)), true);
      }
      append_cell(kappa, io::g17(spec.theta), false);
      append_cell(kappa, io::g17(rep.lambda_min_plus), false);
      append_cell(kappa, io::g17(rep.lambda_max), false);
      append_cell(kappa, io::g17(rep.kappa), true);
    }
    man.seeds = {args.seed ? *args.seed : nc.knotted.seed};
  } else {
    const SpectralReport<double> rep = report_for(build_network(nc, args.seed));
    spectrum = "index,eigenvalue\n";
    for (Index i = 0; i < rep.eigenvalues.size(); ++i) {
      append_cell(spectrum, std::to_string(i), false);
      append_cell(spectrum, io::g17(rep.eigenvalues(i)), true);
    }
    kappa = "lambda_min_plus,lambda_max,kappa\n";
    append_cell(kappa, io::g17(rep.lambda_min_plus), false);
    append_cell(kappa, io::g17(rep.lambda_max), false);
    append_cell(kappa, io::g17(rep.kappa), true);
  }

  io::write_text_atomic(args.out / "spectrum.csv", spectrum);
  io::write_text_atomic(args.out / "kappa.csv", kappa);
  man.outputs = {"spectrum.csv", "kappa.csv"};
  write_manifest(args.out, man);
}

}  // namespace sheafpc::cli
