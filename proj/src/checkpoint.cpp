#include "vfg/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "vfg/error.hpp"

namespace vfg {

using nlohmann::json;

namespace {

const char* const kFormat = "vfg-checkpoint";
const char* const kMlpNames[] = {"w1", "b1", "w2", "b2", "w3", "b3"};

std::string edge_name(const VfgGraph& g, std::size_t e) { return g.edge(e).child + "->" + g.edge(e).parent; }

json mlp_to_json(const Mlp& mlp) {
  json j = json::object();
  const auto params = mlp.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) j[kMlpNames[k]] = tensor_to_json(*params[k]);
  return j;
}

Shape expected_shape(std::size_t k, std::size_t in, std::size_t out) {
  switch (k) {
    case 0: return {kHiddenWidth, in};
    case 1: return {kHiddenWidth};
    case 2: return {kHiddenWidth, kHiddenWidth};
    case 3: return {kHiddenWidth};
    case 4: return {out, kHiddenWidth};
    default: return {out};
  }
}

Mlp mlp_from_json(const json& j, std::size_t in, std::size_t out, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": expected an object");
  Mlp mlp;
  const auto params = mlp.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::string what = where + "." + kMlpNames[k];
    if (!j.contains(kMlpNames[k])) throw DataError(what + " is missing");
    *params[k] = tensor_from_json(j.at(kMlpNames[k]), what);
    const Shape want = expected_shape(k, in, out);
    if (params[k]->shape() != want) {
      throw DataError(what + " has shape " + shape_string(params[k]->shape()) + ", expected " + shape_string(want));
    }
  }
  return mlp;
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

json tensor_to_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor tensor_from_json(const json& j, const std::string& what) {
  const auto shape = field<Shape>(j, "shape", what);
  auto data = field<std::vector<double>>(j, "data", what);
  if (shape.size() > 2) throw DataError(what + ": rank " + std::to_string(shape.size()) + " is not supported");
  if (shape_size(shape) != data.size()) {
    throw DataError(what + ": shape " + shape_string(shape) + " holds " + std::to_string(shape_size(shape)) +
                    " values but data has " + std::to_string(data.size()));
  }
  return Tensor(shape, std::move(data));
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  const Model& m = ckpt.model;
  const VfgGraph& g = m.graph;
  json edges = json::array();
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    json je{{"edge", edge_name(g, e)}};
    if (const FlowStack* f = m.flow(e)) {
      je["kind"] = "flow";
      json blocks = json::array();
      for (const auto& b : f->blocks) {
        blocks.push_back(
            {{"swapped", b.swapped}, {"clamp", b.clamp}, {"scale", mlp_to_json(b.scale_net)}, {"shift", mlp_to_json(b.shift_net)}});
      }
      je["blocks"] = std::move(blocks);
    } else {
      je["kind"] = "identity";
    }
    edges.push_back(std::move(je));
  }
  json locations = json::object();
  for (const auto& [root, t] : m.prior.class_locations) locations[root] = tensor_to_json(t);
  json doc{{"format", kFormat},
           {"version", kCheckpointVersion},
           {"graph", graph_to_json(g)},
           {"prior",
            {{"family", to_string(m.prior.family)}, {"num_classes", m.prior.num_classes}, {"class_locations", locations}}},
           {"recon_mode", to_string(m.recon_mode)},
           {"edges", std::move(edges)},
           {"step", ckpt.step},
           {"rng_state", ckpt.rng_state},
           {"config", ckpt.config}};
  if (ckpt.standardization) {
    doc["standardization"] = {{"mean", ckpt.standardization->mean}, {"std", ckpt.standardization->std}};
  }
  return doc;
}

Checkpoint checkpoint_from_json(const json& doc) {
  if (!doc.is_object()) throw DataError("checkpoint: top level must be an object");
  if (field<std::string>(doc, "format", "checkpoint") != kFormat) throw DataError("checkpoint: unknown format tag");
  const int version = field<int>(doc, "version", "checkpoint");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  if (!doc.contains("graph")) throw DataError("checkpoint: missing field 'graph'");
  Checkpoint ckpt;
  Model& m = ckpt.model;
  m.graph = graph_from_json(doc.at("graph"));
  const VfgGraph& g = m.graph;

  const json& prior = doc.contains("prior") ? doc.at("prior") : json();
  try {
    m.prior.family = parse_prior_family(field<std::string>(prior, "family", "checkpoint prior"));
    m.recon_mode = parse_recon_mode(field<std::string>(doc, "recon_mode", "checkpoint"));
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  m.prior.num_classes = field<std::size_t>(prior, "num_classes", "checkpoint prior");
  const json locations = field<json>(prior, "class_locations", "checkpoint prior");
  for (auto it = locations.begin(); it != locations.end(); ++it) {
    const std::string what = "class locations of root '" + it.key() + "'";
    std::size_t idx = 0;
    try {
      idx = g.index_of(it.key());
    } catch (const std::exception&) {
      throw DataError(what + ": no such node");
    }
    if (!g.is_root(idx)) throw DataError(what + ": node is not a root");
    Tensor t = tensor_from_json(it.value(), what);
    const Shape want{m.prior.num_classes, g.node(idx).dim};
    if (t.shape() != want) {
      throw DataError(what + " has shape " + shape_string(t.shape()) + ", expected " + shape_string(want));
    }
    m.prior.class_locations.emplace(it.key(), std::move(t));
  }
  if (m.prior.conditional() && m.prior.class_locations.size() != g.roots().size()) {
    throw DataError("checkpoint: conditional prior needs class locations for every root");
  }

  const json edges = field<json>(doc, "edges", "checkpoint");
  if (!edges.is_array() || edges.size() != g.edge_count()) {
    throw DataError("checkpoint: expected " + std::to_string(g.edge_count()) + " edge entries");
  }
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const std::string name = edge_name(g, e);
    const std::string where = "edge '" + name + "'";
    const json& je = edges[e];
    if (field<std::string>(je, "edge", where) != name) throw DataError(where + ": entry out of order or mislabelled");
    const std::string kind = field<std::string>(je, "kind", where);
    const EdgeFunc& spec = g.edge(e).func;
    if (kind == "identity") {
      if (spec.is_flow()) throw DataError(where + ": graph declares a flow but the checkpoint holds identity");
      m.edges.emplace_back(IdentityEdge{});
      continue;
    }
    if (kind != "flow") throw DataError(where + ": unknown kind '" + kind + "'");
    if (!spec.is_flow()) throw DataError(where + ": graph declares identity but the checkpoint holds a flow");
    const json blocks = field<json>(je, "blocks", where);
    if (!blocks.is_array() || blocks.size() != static_cast<std::size_t>(spec.blocks)) {
      throw DataError(where + ": expected " + std::to_string(spec.blocks) + " blocks");
    }
    FlowStack stack;
    stack.dim = g.node(g.edge_child(e)).dim;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const std::string bw = where + " block " + std::to_string(k);
      CouplingBlock b;
      b.dim = stack.dim;
      b.swapped = field<bool>(blocks[k], "swapped", bw);
      if (b.swapped != (k % 2 == 1)) throw DataError(bw + ": partition order is inconsistent");
      b.clamp = field<double>(blocks[k], "clamp", bw);
      if (!(b.clamp > 0.0)) throw DataError(bw + ": clamp must be positive");
      if (!blocks[k].contains("scale") || !blocks[k].contains("shift")) throw DataError(bw + ": missing networks");
      b.scale_net = mlp_from_json(blocks[k].at("scale"), b.a_size(), b.b_size(), bw + " scale");
      b.shift_net = mlp_from_json(blocks[k].at("shift"), b.a_size(), b.b_size(), bw + " shift");
      stack.blocks.push_back(std::move(b));
    }
    m.edges.emplace_back(std::move(stack));
  }

  ckpt.step = field<std::size_t>(doc, "step", "checkpoint");
  ckpt.rng_state = field<std::uint64_t>(doc, "rng_state", "checkpoint");
  ckpt.config = field<json>(doc, "config", "checkpoint");
  if (doc.contains("standardization")) {
    const json& s = doc.at("standardization");
    ColumnStats stats{field<std::vector<double>>(s, "mean", "checkpoint standardization"),
                      field<std::vector<double>>(s, "std", "checkpoint standardization")};
    if (stats.mean.size() != g.data_dim() || stats.std.size() != g.data_dim()) {
      throw DataError("checkpoint standardization: expected " + std::to_string(g.data_dim()) + " columns");
    }
    for (double sd : stats.std) {
      if (!(sd > 0.0)) throw DataError("checkpoint standardization: std must be positive");
    }
    ckpt.standardization = std::move(stats);
  }
  return ckpt;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) { return checkpoint_to_json(ckpt).dump(1) + "\n"; }

Checkpoint parse_checkpoint(std::string_view text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(source + ": malformed or truncated checkpoint (" + e.what() + ")");
  }
  try {
    return checkpoint_from_json(doc);
  } catch (const DataError& e) {
    throw DataError(source + ": " + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out << serialize_checkpoint(ckpt);
  if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str(), path.string());
}

}  // namespace vfg
