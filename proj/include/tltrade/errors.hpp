#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tlt {

// Every error raised by the library carries a stable name so that the CLI
// can print it verbatim ("IngestError: ...").
class Error : public std::runtime_error {
 public:
  Error(std::string_view name, const std::string& what);
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

#define TLT_DECLARE_ERROR(Type)                                      \
  class Type : public Error {                                        \
   public:                                                           \
    explicit Type(const std::string& what) : Error(#Type, what) {}   \
  };

TLT_DECLARE_ERROR(IngestError)
TLT_DECLARE_ERROR(InsufficientDataError)
TLT_DECLARE_ERROR(CropError)
TLT_DECLARE_ERROR(ConfigError)
TLT_DECLARE_ERROR(ShapeError)
TLT_DECLARE_ERROR(ImportError)
TLT_DECLARE_ERROR(FitError)
TLT_DECLARE_ERROR(TrainError)
TLT_DECLARE_ERROR(MetricError)
TLT_DECLARE_ERROR(SampleError)
TLT_DECLARE_ERROR(ReportError)
TLT_DECLARE_ERROR(LedgerError)

#undef TLT_DECLARE_ERROR

}  // namespace tlt
