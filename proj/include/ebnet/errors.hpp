#pragma once

#include <stdexcept>
#include <string>

namespace ebnet {

// Base class for everything this library throws.
struct EbError : std::runtime_error {
  explicit EbError(const std::string& msg) : std::runtime_error(msg) {}
};

#define EBNET_DEFINE_ERROR(name)                                   \
  struct name : EbError {                                          \
    explicit name(const std::string& msg) : EbError(msg) {}        \
  }

EBNET_DEFINE_ERROR(ShapeMismatch);
EBNET_DEFINE_ERROR(ParseError);
EBNET_DEFINE_ERROR(CycleDetected);
EBNET_DEFINE_ERROR(MissingWeights);
EBNET_DEFINE_ERROR(IndexOutOfRange);
EBNET_DEFINE_ERROR(NegativeWeight);
EBNET_DEFINE_ERROR(NegativeActivation);
EBNET_DEFINE_ERROR(UnknownLayer);
EBNET_DEFINE_ERROR(UnsupportedLayerKind);
EBNET_DEFINE_ERROR(SignalBelowTarget);
EBNET_DEFINE_ERROR(DualUndefined);
EBNET_DEFINE_ERROR(TooLarge);
EBNET_DEFINE_ERROR(SingularSystem);
EBNET_DEFINE_ERROR(EmptyCategory);
EBNET_DEFINE_ERROR(EmptyAttention);
EBNET_DEFINE_ERROR(EmptyProposal);
EBNET_DEFINE_ERROR(IoError);

#undef EBNET_DEFINE_ERROR

}  // namespace ebnet
