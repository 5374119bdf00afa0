#pragma once

#include "invnet/unrolled.hpp"
#include "op_json.hpp"

namespace invnet::detail {

Json model_json(const UnrolledModel& m);
UnrolledModel model_from_json(const Json& doc);

}  // namespace invnet::detail
