#include "strider/error.hpp"

namespace strider {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::malformed_global_header: return "MalformedGlobalHeader";
    case Errc::truncated_record: return "TruncatedRecord";
    case Errc::unsupported_link_type: return "UnsupportedLinkType";
    case Errc::header_too_short: return "HeaderTooShort";
    case Errc::empty_flow: return "EmptyFlow";
    case Errc::indivisible_length: return "IndivisibleLength";
    case Errc::negative_interval: return "NegativeInterval";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::non_finite_input: return "NonFiniteInput";
    case Errc::not_scalar: return "NotScalar";
    case Errc::ratio_out_of_range: return "RatioOutOfRange";
    case Errc::plan_mismatch: return "PlanMismatch";
    case Errc::class_out_of_range: return "ClassOutOfRange";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::label_out_of_range: return "LabelOutOfRange";
    case Errc::empty_split: return "EmptySplit";
    case Errc::too_few_samples: return "TooFewSamples";
    case Errc::mailbox_busy: return "MailboxBusy";
    case Errc::empty_mailbox: return "EmptyMailbox";
    case Errc::not_found: return "NotFound";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::io_error: return "IoError";
    case Errc::parse_error: return "ParseError";
  }
  return "Unknown";
}

}  // namespace strider
