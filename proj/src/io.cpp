#include "io.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sheafpc::io {

using nlohmann::json;

namespace {

const json& require(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end())
    throw std::invalid_argument("missing field '" + std::string(key) + "' in " + where);
  return *it;
}

std::string get_string(const json& j, const char* key, const std::string& where) {
  const json& v = require(j, key, where);
  if (!v.is_string())
    throw std::invalid_argument("field '" + std::string(key) + "' in " + where + " must be a string");
  return v.get<std::string>();
}

}  // namespace

Matrix<double> matrix_from_json(const json& j, const std::string& where) {
  if (j.is_number()) {
    Matrix<double> W(1, 1);
    W(0, 0) = j.get<double>();
    return W;
  }
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw std::invalid_argument(where + " must be a number or a non-empty array of rows");
  const Index rows = Index(j.size());
  const Index cols = Index(j.front().size());
  Matrix<double> W(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = j[std::size_t(i)];
    if (!row.is_array() || Index(row.size()) != cols)
      throw std::invalid_argument(where + ": row " + std::to_string(i) + " has wrong length");
    for (Index k = 0; k < cols; ++k) {
      const json& v = row[std::size_t(k)];
      if (!v.is_number()) throw std::invalid_argument(where + ": entries must be numbers");
      W(i, k) = v.get<double>();
    }
  }
  return W;
}

json matrix_to_json(const Matrix<double>& W) {
  json rows = json::array();
  for (Index i = 0; i < W.rows(); ++i) {
    json row = json::array();
    for (Index k = 0; k < W.cols(); ++k) row.push_back(W(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

json sheaf_to_json(const PCSheaf<double>& F) {
  json jv = json::array();
  for (const auto& v : F.vertices()) jv.push_back({{"id", v.id}, {"dim", v.dim}});
  json je = json::array();
  for (const auto& e : F.edges())
    je.push_back({{"id", e.id},
                  {"src", e.src},
                  {"dst", e.dst},
                  {"weight", matrix_to_json(e.weight)}});
  return {{"vertices", std::move(jv)}, {"edges", std::move(je)}};
}

PCSheaf<double> sheaf_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("network description must be a JSON object");
  const json& jv = require(j, "vertices", "network description");
  const json& je = require(j, "edges", "network description");
  if (!jv.is_array() || !je.is_array())
    throw std::invalid_argument("'vertices' and 'edges' must be arrays");

  std::vector<Vertex> vertices;
  for (std::size_t i = 0; i < jv.size(); ++i) {
    const std::string where = "vertex " + std::to_string(i);
    const json& v = jv[i];
    const json& dim = require(v, "dim", where);
    if (!dim.is_number_integer() || dim.get<Index>() <= 0)
      throw std::invalid_argument("field 'dim' in " + where + " must be a positive integer");
    vertices.push_back({get_string(v, "id", where), dim.get<Index>()});
  }
  std::vector<Edge<double>> edges;
  for (std::size_t i = 0; i < je.size(); ++i) {
    const std::string where = "edge " + std::to_string(i);
    const json& e = je[i];
    Edge<double> ed;
    ed.id = get_string(e, "id", where);
    ed.src = get_string(e, "src", where);
    ed.dst = get_string(e, "dst", where);
    ed.weight = matrix_from_json(require(e, "weight", where), "weight of " + where);
    edges.push_back(std::move(ed));
  }
  return PCSheaf<double>(std::move(vertices), std::move(edges));
}

PCSheaf<double> load_sheaf(const std::filesystem::path& path) {
  return sheaf_from_json(load_json(path));
}

void save_sheaf(const PCSheaf<double>& F, const std::filesystem::path& path) {
  write_text_atomic(path, sheaf_to_json(F).dump(2) + "\n");
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << body;
    if (!out.flush()) throw std::runtime_error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string iso8601_utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace sheafpc::io
