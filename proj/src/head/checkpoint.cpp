#include "repmet/head/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "repmet/core/error.hpp"

namespace repmet::head {

using nlohmann::json;
using diff::Tensor;

namespace {

json tensor_entry(const std::string& name, const Tensor& t) {
  return json{{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", t.values()}};
}

Tensor read_tensor(const std::map<std::string, json>& entries, const std::string& name, std::size_t rows,
                   std::size_t cols) {
  auto it = entries.find(name);
  if (it == entries.end()) throw ParseError("checkpoint: missing array '" + name + "'", 0);
  const json& e = it->second;
  const auto r = e.at("rows").get<std::size_t>();
  const auto c = e.at("cols").get<std::size_t>();
  if (r != rows || c != cols) {
    throw ParseError("checkpoint: array '" + name + "' has shape [" + std::to_string(r) + "x" + std::to_string(c) +
                         "], expected [" + std::to_string(rows) + "x" + std::to_string(cols) + "]",
                     0);
  }
  return Tensor(r, c, e.at("data").get<std::vector<double>>());
}

}  // namespace

std::string checkpoint_to_json(const RepMetHead& head, const std::vector<std::string>& class_names) {
  const EmbeddingConfig& ec = head.embedding().config();
  const MixtureConfig& mc = head.mixture();
  json config = {
      {"input_dim", ec.input_dim},
      {"layer_widths", ec.layer_widths},
      {"final_l2_normalize", ec.final_l2_normalize},
      {"sigma", mc.sigma},
      {"margin", mc.margin},
      {"modes_per_class", mc.modes_per_class},
      {"posterior_mode", to_string(mc.posterior)},
      {"mode_counts", head.representatives().layout().counts()},
  };
  json arrays = json::array();
  for (const auto& layer : head.embedding().layers()) {
    arrays.push_back(tensor_entry(layer.weight.name, layer.weight.value));
    arrays.push_back(tensor_entry(layer.bias.name, layer.bias.value));
    if (layer.norm) {
      const auto& bn = *layer.norm;
      arrays.push_back(tensor_entry(bn.gamma.name, bn.gamma.value));
      arrays.push_back(tensor_entry(bn.beta.name, bn.beta.value));
      const std::string prefix = bn.gamma.name.substr(0, bn.gamma.name.size() - std::string(".gamma").size());
      arrays.push_back(tensor_entry(prefix + ".running_mean", bn.running_mean));
      arrays.push_back(tensor_entry(prefix + ".running_var", bn.running_var));
    }
  }
  arrays.push_back(tensor_entry(head.representatives().weights().name, head.representatives().weights().value));

  json doc = {{"schema_version", kCheckpointSchemaVersion},
              {"format", "repmet-checkpoint"},
              {"class_names", class_names},
              {"config", config},
              {"arrays", arrays}};
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 0);
  }
  try {
    if (doc.at("schema_version").get<int>() != kCheckpointSchemaVersion) {
      throw ParseError("checkpoint: unsupported schema_version " + doc.at("schema_version").dump(), 0);
    }
    const json& cfg = doc.at("config");
    EmbeddingConfig ec;
    ec.input_dim = cfg.at("input_dim").get<std::size_t>();
    ec.layer_widths = cfg.at("layer_widths").get<std::vector<std::size_t>>();
    ec.final_l2_normalize = cfg.at("final_l2_normalize").get<bool>();
    ec.validate();

    MixtureConfig mc;
    mc.sigma = cfg.at("sigma").get<double>();
    mc.margin = cfg.at("margin").get<double>();
    mc.modes_per_class = cfg.at("modes_per_class").get<std::size_t>();
    mc.posterior = posterior_mode_from_string(cfg.at("posterior_mode").get<std::string>());
    const auto counts = cfg.at("mode_counts").get<std::vector<std::size_t>>();
    ModeLayout layout = ModeLayout::from_counts(counts);
    mc.num_classes = layout.num_classes();

    std::map<std::string, json> entries;
    for (const json& e : doc.at("arrays")) entries.emplace(e.at("name").get<std::string>(), e);

    Rng unused(0);
    EmbeddingNet net(ec, unused);
    std::size_t in = ec.input_dim;
    for (auto& layer : net.layers()) {
      const std::size_t out = layer.weight.value.cols();
      layer.weight.value = read_tensor(entries, layer.weight.name, in, out);
      layer.bias.value = read_tensor(entries, layer.bias.name, 1, out);
      if (layer.norm) {
        auto& bn = *layer.norm;
        bn.gamma.value = read_tensor(entries, bn.gamma.name, 1, out);
        bn.beta.value = read_tensor(entries, bn.beta.name, 1, out);
        const std::string prefix = bn.gamma.name.substr(0, bn.gamma.name.size() - std::string(".gamma").size());
        bn.running_mean = read_tensor(entries, prefix + ".running_mean", 1, out);
        bn.running_var = read_tensor(entries, prefix + ".running_var", 1, out);
      }
      for (auto* p : {&layer.weight, &layer.bias}) p->zero_grad();
      in = out;
    }
    const Tensor rep = read_tensor(entries, "representatives", 1, layout.total_modes() * ec.output_dim());
    Representatives reps = Representatives::from_values(layout, rep.reshaped(layout.total_modes(), ec.output_dim()));

    Checkpoint ck{RepMetHead(std::move(net), std::move(reps), mc),
                  doc.at("class_names").get<std::vector<std::string>>()};
    if (ck.class_names.size() != layout.num_classes()) {
      throw ParseError("checkpoint: class_names has " + std::to_string(ck.class_names.size()) + " entries for " +
                           std::to_string(layout.num_classes()) + " classes",
                       0);
    }
    ck.head.set_mode(diff::BnMode::eval);
    return ck;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 0);
  }
}

void save_checkpoint(const std::filesystem::path& path, const RepMetHead& head,
                     const std::vector<std::string>& class_names) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(head, class_names);
  if (!out) throw InvalidArgument("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace repmet::head
