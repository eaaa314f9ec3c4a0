#pragma once

#include <stdexcept>
#include <string>

namespace deskmt {

/// Base class for every error raised by the toolkit. Subclasses name the
/// failed contract so callers can branch on type rather than message text.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define DESKMT_DEFINE_ERROR(Name)                                  \
    class Name : public Error {                                    \
    public:                                                        \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

// corpus
DESKMT_DEFINE_ERROR(AlignmentMismatch);
DESKMT_DEFINE_ERROR(EncodingError);
DESKMT_DEFINE_ERROR(PairMismatch);
DESKMT_DEFINE_ERROR(IoError);
DESKMT_DEFINE_ERROR(InvalidArgument);

// metrics
DESKMT_DEFINE_ERROR(LengthMismatch);
DESKMT_DEFINE_ERROR(EmptySet);

// codec
DESKMT_DEFINE_ERROR(EmptyCorpus);
DESKMT_DEFINE_ERROR(MissingTag);
DESKMT_DEFINE_ERROR(InvalidId);

// model
DESKMT_DEFINE_ERROR(ShapeMismatch);
DESKMT_DEFINE_ERROR(NonFiniteLoss);
DESKMT_DEFINE_ERROR(IncompatibleVocab);

// sampler
DESKMT_DEFINE_ERROR(EmptyManifest);
DESKMT_DEFINE_ERROR(ZeroSize);
DESKMT_DEFINE_ERROR(MissingCorpus);

// decode
DESKMT_DEFINE_ERROR(IncompatibleMembers);

#undef DESKMT_DEFINE_ERROR

}  // namespace deskmt
