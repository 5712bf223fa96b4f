#pragma once

#include <string>

namespace fsl {

// Six significant digits, %g style, C locale. Ties round to even on the
// exact binary value.
std::string format_number(double value);

}  // namespace fsl
