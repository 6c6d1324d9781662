// Python bindings: the toy model, a simulated swarm, placement helpers and
// the experiment harness.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>

#include "swarmpipe/balancer.hpp"
#include "swarmpipe/bench.hpp"
#include "swarmpipe/errors.hpp"
#include "swarmpipe/quantize.hpp"
#include "swarmpipe/sim_swarm.hpp"

namespace py = pybind11;
using namespace swarmpipe;

namespace {

struct PyModel {
  std::shared_ptr<const Model> model;
};

DecodeMode mode_for(std::optional<std::uint64_t> sample_seed) {
  return sample_seed ? DecodeMode::sample(*sample_seed) : DecodeMode::greedy();
}

py::dict stats_dict(const GenerationStats& s) {
  py::dict d;
  d["tokens"] = s.tokens;
  d["steps_per_s"] = s.steps_per_s();
  d["elapsed_s"] = s.elapsed();
  d["bytes_sent"] = s.bytes_sent;
  d["bytes_received"] = s.bytes_received;
  d["step_payload_bytes"] = s.step_payload_bytes;
  d["restore_payload_bytes"] = s.restore_payload_bytes;
  d["failures"] = s.failures;
  d["recoveries"] = s.recoveries;
  d["restarts"] = s.restarts;
  d["completed"] = s.completed;
  d["step_bytes"] = s.step_bytes;
  return d;
}

class PySwarm {
 public:
  PySwarm(const PyModel& m, double p, double rtt_ms, double bandwidth_bps, std::uint64_t net_seed)
      : swarm_(m.model, NetProfile{bandwidth_bps, rtt_ms, p}, net_seed) {}

  void add_pipeline(std::size_t stages, std::size_t replicas, std::uint32_t blocks_per_stage) {
    swarm_.add_pipeline(stages, replicas, blocks_per_stage, {}, next_id_);
    next_id_ += static_cast<ServerId>(stages * replicas);
  }

  ServerId add_server(std::uint32_t capacity, std::optional<std::uint32_t> start) {
    ServerConfig c;
    c.id = next_id_++;
    c.capacity = capacity;
    c.start = start;
    return swarm_.add_server(c).config().id;
  }

  void crash(ServerId id) { swarm_.server(id).crash(); }

  py::tuple generate(const std::vector<Token>& prefix, std::size_t n_new, const std::string& strategy,
                     bool quantized, bool relay, std::uint64_t seed, std::optional<std::uint64_t> sample_seed) {
    ClientConfig cc;
    cc.strategy = parse_strategy(strategy);
    cc.quantized = quantized;
    cc.relay = relay;
    cc.seed = seed;
    auto& client = swarm_.add_client(cc, "client-" + std::to_string(clients_++));
    auto tokens = client.generate(prefix, n_new, mode_for(sample_seed));
    return py::make_tuple(tokens, stats_dict(client.stats()));
  }

  std::vector<std::pair<std::vector<Token>, double>> beam_generate(const std::vector<Token>& prefix,
                                                                   std::size_t n_new, std::size_t k) {
    auto& client = swarm_.add_client({}, "client-" + std::to_string(clients_++));
    std::vector<std::pair<std::vector<Token>, double>> out;
    for (auto& h : client.beam_generate(prefix, n_new, k)) out.emplace_back(std::move(h.tokens), h.score);
    return out;
  }

  std::string directory_json() const {
    auto& self = const_cast<SimSwarm&>(swarm_);
    return self.directory().dump_json(self.clock().now());
  }
  double now() { return swarm_.clock().now(); }

 private:
  SimSwarm swarm_;
  ServerId next_id_ = 0;
  std::size_t clients_ = 0;
};

std::vector<ServerSpec> specs_from(const std::vector<std::pair<std::uint32_t, double>>& servers) {
  std::vector<ServerSpec> out;
  for (const auto& [cap, thr] : servers) out.push_back({cap, thr});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Fault-tolerant pipeline-parallel inference over a simulated swarm";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SwarmUnavailable>(m, "SwarmUnavailable", PyExc_RuntimeError);
  py::register_exception<BudgetExceeded>(m, "BudgetExceeded", PyExc_RuntimeError);

  py::class_<PyModel>(m, "Model")
      .def(py::init([](std::size_t n_blocks, std::size_t hidden_dim, std::size_t n_heads, std::size_t vocab_size,
                       std::size_t max_seq_len, std::uint64_t seed) {
             return PyModel{std::make_shared<const Model>(
                 init_model(ModelConfig{n_blocks, hidden_dim, n_heads, vocab_size, max_seq_len, seed}))};
           }),
           py::arg("n_blocks") = 8, py::arg("hidden_dim") = 64, py::arg("n_heads") = 4, py::arg("vocab_size") = 256,
           py::arg("max_seq_len") = 2048, py::arg("seed") = 0)
      .def_property_readonly("n_blocks", [](const PyModel& p) { return p.model->config.n_blocks; })
      .def_property_readonly("hidden_dim", [](const PyModel& p) { return p.model->config.hidden_dim; })
      .def_property_readonly("vocab_size", [](const PyModel& p) { return p.model->config.vocab_size; })
      .def_property_readonly("parameter_count", [](const PyModel& p) { return p.model->parameter_count(); })
      .def("params_hash", [](const PyModel& p) { return params_hash(p.model->blocks); })
      .def(
          "generate",
          [](const PyModel& p, const std::vector<Token>& prefix, std::size_t n_new,
             std::optional<std::uint64_t> sample_seed) {
            return reference_generate(*p.model, prefix, n_new, mode_for(sample_seed));
          },
          py::arg("prefix"), py::arg("n_new"), py::arg("sample_seed") = py::none(),
          "Single-process generation; the ground truth for swarm runs.")
      .def(
          "beam_search",
          [](const PyModel& p, const std::vector<Token>& prefix, std::size_t n_new, std::size_t k) {
            std::vector<std::pair<std::vector<Token>, double>> out;
            for (auto& h : reference_beam_search(*p.model, prefix, n_new, k)) out.emplace_back(h.tokens, h.score);
            return out;
          },
          py::arg("prefix"), py::arg("n_new"), py::arg("k"));

  py::class_<PySwarm>(m, "Swarm")
      .def(py::init<const PyModel&, double, double, double, std::uint64_t>(), py::arg("model"),
           py::arg("p") = 0.0, py::arg("rtt_ms") = 1.0, py::arg("bandwidth_bps") = 1e9, py::arg("net_seed") = 0,
           py::keep_alive<1, 2>())
      .def("add_pipeline", &PySwarm::add_pipeline, py::arg("stages"), py::arg("replicas"),
           py::arg("blocks_per_stage"))
      .def("add_server", &PySwarm::add_server, py::arg("capacity"), py::arg("start") = py::none(),
           "Adds one server; returns its id. Without a start it picks the weakest window.")
      .def("crash", &PySwarm::crash, py::arg("server_id"))
      .def("generate", &PySwarm::generate, py::arg("prefix"), py::arg("n_new"), py::arg("strategy") = "dual-cache",
           py::arg("quantized") = false, py::arg("relay") = false, py::arg("seed") = 0,
           py::arg("sample_seed") = py::none(), "Returns (tokens, stats).")
      .def("beam_generate", &PySwarm::beam_generate, py::arg("prefix"), py::arg("n_new"), py::arg("k"))
      .def("directory_json", &PySwarm::directory_json)
      .def_property_readonly("now", &PySwarm::now);

  m.def("choose_start", [](const std::vector<double>& load, std::size_t k) { return choose_start(load, k); },
        py::arg("load"), py::arg("k"));
  m.def("swarm_throughput", [](const std::vector<double>& load) { return swarm_throughput(load); }, py::arg("load"));
  m.def(
      "greedy_join",
      [](const std::vector<std::pair<std::uint32_t, double>>& servers, std::size_t n_blocks) {
        const auto r = greedy_join(specs_from(servers), n_blocks);
        return py::make_tuple(r.starts, r.throughput);
      },
      py::arg("servers"), py::arg("n_blocks"), "servers: [(capacity, throughput)] -> (starts, throughput)");
  m.def(
      "optimal_assignment",
      [](const std::vector<std::pair<std::uint32_t, double>>& servers, std::size_t n_blocks) {
        const auto r = optimal_assignment_bruteforce(specs_from(servers), n_blocks);
        return py::make_tuple(r.starts, r.throughput);
      },
      py::arg("servers"), py::arg("n_blocks"));

  m.def(
      "quantize_roundtrip",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> a) {
        if (a.ndim() != 2) throw ConfigError("expected a 2-d array");
        HiddenStates h;
        h.values = Matrix(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
        std::copy(a.data(), a.data() + a.size(), h.values.data().begin());
        const auto back = dequantize_hidden(quantize_hidden(h));
        py::array_t<float> out({a.shape(0), a.shape(1)});
        std::copy(back.values.data().begin(), back.values.data().end(), out.mutable_data());
        return out;
      },
      py::arg("values"), "8-bit blockwise encode then decode.");

  m.def(
      "offload_bound",
      [](double params_bytes, double link_bps) {
        const auto e = estimate_offload_bound(params_bytes, link_bps);
        return py::make_tuple(e.seconds_per_pass, e.tokens_per_s);
      },
      py::arg("params_bytes"), py::arg("link_bits_per_s"));

  m.def(
      "failure_rate_cell",
      [](const std::string& config_json, std::uint64_t seed, double p, std::size_t length,
         const std::string& strategy) {
        const auto cfg = FailureRateConfig::from_json(config_json);
        py::gil_scoped_release release;
        return failure_rate_jsonl({run_failure_rate_cell(cfg, seed, p, length, parse_strategy(strategy))});
      },
      py::arg("config_json"), py::arg("seed"), py::arg("p"), py::arg("length"), py::arg("strategy"),
      "One grid cell as a JSON line.");
}
