// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "json.hpp"
#include "lipctx/certify.hpp"
#include "lipctx/layers.hpp"
#include "lipctx/measure.hpp"
#include "lipctx/transformer.hpp"

namespace lipctx {

using Json = nlohmann::json;

inline constexpr const char* kModelFormat = "lipctx-model-v1";
inline constexpr const char* kReportFormat = "lipctx-cert-v1";

/// Serializes with every float printed to 17 significant digits; infinities
/// become the strings "inf" / "-inf".
std::string dump_json(const Json& j, int indent = 2);
Json parse_json(const std::string& text);
Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

Json to_json(const Vector& v);
Vector vector_from_json(const Json& j);
/// {"rows", "cols", "data"} row-major; matrices with few nonzeros are written
/// as {"rows", "cols", "entries": [[i, j, value], ...]}.
Json to_json(const Matrix& m);
Json to_json(const SparseMatrix& m);
/// Also accepts a nested array of rows.
Matrix matrix_from_json(const Json& j);
SparseMatrix sparse_from_json(const Json& j);

Json to_json(const EmpiricalMeasure& mu);
EmpiricalMeasure measure_from_json(const Json& j);
Json to_json(const DomainBall& ball);
DomainBall ball_from_json(const Json& j);
/// A single block is written as {"center", "radius"}, products as {"blocks": [...]}.
Json to_json(const ProductDomain& domain);
ProductDomain domain_from_json(const Json& j);

Json to_json(const MlpLayer& layer);
Json to_json(const AttentionLayer& layer);
/// Step sizes are taken as stored, without clamping.
MlpLayer mlp_from_json(const Json& j);
AttentionLayer attention_from_json(const Json& j);

Json to_json(const ScalarModel& model);
ScalarModel model_from_json(const Json& j);

Json to_json(const Witness& w);
Witness witness_from_json(const Json& j);
Json to_json(const CertReport& report);
CertReport report_from_json(const Json& j);

}  // namespace lipctx
