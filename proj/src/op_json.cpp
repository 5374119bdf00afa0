#include "op_json.hpp"

#include "invnet/base64.hpp"
#include "invnet/errors.hpp"

namespace invnet::detail {

Json shape_json(const Shape& s) { return Json(s); }

Shape shape_from_json(const Json& j) {
  if (!j.is_array()) throw IoError("shape must be an array");
  Shape s;
  for (const auto& e : j) {
    if (!e.is_number_unsigned()) throw IoError("shape extents must be unsigned integers");
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

std::string doubles_json(std::span<const double> v) { return base64::encode_doubles(v); }

std::vector<double> doubles_from_json(const Json& j) {
  if (!j.is_string()) throw IoError("expected a base64 string");
  return base64::decode_doubles(j.get<std::string>());
}

const Json& member(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw IoError(std::string("missing field '") + key + "'");
  return j.at(key);
}

std::size_t OpWriter::add(const LinearOp& op) {
  if (auto it = ids_.find(op.node_id()); it != ids_.end()) return it->second;
  Json children = Json::array();
  for (const auto& c : op.children()) children.push_back(add(c));

  Json e;
  e["kind"] = to_string(op.kind());
  e["domain"] = shape_json(op.domain_shape());
  e["codomain"] = shape_json(op.codomain_shape());
  if (!children.empty()) e["children"] = children;
  switch (op.kind()) {
    case OpKind::Dense: {
      const auto& m = *op.dense_matrix();
      std::vector<double> row_major;
      row_major.reserve(static_cast<std::size_t>(m.size()));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) row_major.push_back(m(r, c));
      e["matrix"] = doubles_json(row_major);
      break;
    }
    case OpKind::Conv2D: {
      const auto& p = *op.conv();
      e["kernel_shape"] = shape_json(p.kernel.shape());
      e["kernel"] = doubles_json(p.kernel.data());
      e["image_shape"] = shape_json(p.image_shape);
      e["boundary"] = to_string(p.boundary);
      break;
    }
    case OpKind::Radon: {
      const auto& p = *op.radon();
      e["angles"] = doubles_json(p.angles);
      e["detectors"] = p.detectors;
      break;
    }
    case OpKind::Diagonal: e["gains"] = doubles_json(*op.diagonal_gains()); break;
    case OpKind::Scaled: e["factor"] = op.scale(); break;
    default: break;
  }
  const std::size_t id = table_.size();
  table_.push_back(std::move(e));
  ids_[op.node_id()] = id;
  return id;
}

OpReader::OpReader(const Json& table) : table_(table) {
  if (!table.is_array()) throw IoError("operator table must be an array");
  built_.resize(table.size());
  visiting_.assign(table.size(), false);
}

LinearOp OpReader::get(std::size_t id) {
  if (id >= built_.size()) throw IoError("operator reference " + std::to_string(id) + " out of range");
  if (built_[id]) return *built_[id];
  if (visiting_[id]) throw IoError("cyclic operator reference");
  visiting_[id] = true;

  const Json& e = table_[id];
  const std::string kind = member(e, "kind").get<std::string>();
  const Shape dom = shape_from_json(member(e, "domain"));
  const Shape cod = shape_from_json(member(e, "codomain"));
  std::vector<LinearOp> kids;
  if (e.contains("children"))
    for (const auto& c : e.at("children")) kids.push_back(get(c.get<std::size_t>()));
  auto need = [&](std::size_t n) {
    if (kids.size() != n) throw IoError(kind + " operator has the wrong number of children");
  };

  LinearOp op;
  if (kind == "identity") {
    op = make_identity(dom);
  } else if (kind == "diagonal") {
    op = make_diagonal(doubles_from_json(member(e, "gains")), dom);
  } else if (kind == "dense") {
    const auto v = doubles_from_json(member(e, "matrix"));
    const auto rows = static_cast<Eigen::Index>(shape_size(cod));
    const auto cols = static_cast<Eigen::Index>(shape_size(dom));
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw IoError("dense matrix payload has wrong size");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
    op = make_dense(std::move(m), dom, cod);
  } else if (kind == "conv2d") {
    SignalGrid k(shape_from_json(member(e, "kernel_shape")), doubles_from_json(member(e, "kernel")));
    op = make_conv2d(k, shape_from_json(member(e, "image_shape")),
                     boundary_from_string(member(e, "boundary").get<std::string>()));
  } else if (kind == "radon") {
    op = make_radon(dom, doubles_from_json(member(e, "angles")), member(e, "detectors").get<std::size_t>());
  } else if (kind == "downsample") {
    if (dom.empty() || cod.empty() || cod[0] == 0) throw IoError("bad downsample shapes");
    op = make_downsample(dom, dom[0] / cod[0]);
  } else if (kind == "scaled") {
    need(1);
    op = scaled(kids[0], member(e, "factor").get<double>());
  } else if (kind == "sum") {
    op = sum(kids);
  } else if (kind == "composed") {
    need(2);
    op = compose(kids[0], kids[1]);
  } else if (kind == "adjoint") {
    need(1);
    op = adjoint_of(kids[0]);
  } else {
    throw IoError("unknown operator kind '" + kind + "'");
  }
  if (op.domain_shape() != dom || op.codomain_shape() != cod) {
    throw IoError("operator " + std::to_string(id) + " shapes do not match its record");
  }
  visiting_[id] = false;
  built_[id] = op;
  return op;
}

}  // namespace invnet::detail
