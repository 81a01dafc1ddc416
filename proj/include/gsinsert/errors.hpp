// Exception taxonomy shared by all modules.
#pragma once

#include <stdexcept>
#include <string>

namespace gsinsert {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define GSINSERT_DEFINE_ERROR(Name)       \
    struct Name : Error {                 \
        using Error::Error;               \
    }

// geometry
GSINSERT_DEFINE_ERROR(NonRepresentable);
GSINSERT_DEFINE_ERROR(NonFinite);

// scene / ply
GSINSERT_DEFINE_ERROR(MalformedPly);
GSINSERT_DEFINE_ERROR(UnsupportedShDegree);
GSINSERT_DEFINE_ERROR(IoFailure);
GSINSERT_DEFINE_ERROR(AnisotropicObjectScale);

// rendering
GSINSERT_DEFINE_ERROR(BehindCamera);
GSINSERT_DEFINE_ERROR(FullyBehindCamera);
GSINSERT_DEFINE_ERROR(NothingVisible);

// oracle protocol
GSINSERT_DEFINE_ERROR(SchemaViolation);
GSINSERT_DEFINE_ERROR(BackendUnavailable);
GSINSERT_DEFINE_ERROR(FixtureMiss);
GSINSERT_DEFINE_ERROR(MalformedFixture);

// region / dof fitting
GSINSERT_DEFINE_ERROR(DetectionMiss);
GSINSERT_DEFINE_ERROR(Degenerate);
GSINSERT_DEFINE_ERROR(InvalidRatio);
GSINSERT_DEFINE_ERROR(Underdetermined);

// refinement
GSINSERT_DEFINE_ERROR(EmptyRegion);
GSINSERT_DEFINE_ERROR(RatioTooLow);

// pipeline
GSINSERT_DEFINE_ERROR(ConfigError);
GSINSERT_DEFINE_ERROR(StageFailure);

#undef GSINSERT_DEFINE_ERROR

}  // namespace gsinsert
