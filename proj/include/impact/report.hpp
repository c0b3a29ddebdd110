#pragma once

#include "json.hpp"

#include "impact/fit.hpp"
#include "impact/measure.hpp"
#include "impact/nullmodel.hpp"
#include "impact/propagator.hpp"
#include "impact/tape.hpp"

namespace impact {

// JSON views of result types. Non-finite numbers become null.
nlohmann::json number(double v);
nlohmann::json to_json(const PowerLawFit& fit);
nlohmann::json to_json(const VolumeLawFit& fit);
nlohmann::json to_json(const KernelForm& form);
nlohmann::json to_json(const InversionResult& inversion);
nlohmann::json to_json(const CostDiagnostics& d);
nlohmann::json to_json(const KappaChiStudy& study);
nlohmann::json to_json(const ShuffleReport& report);
nlohmann::json to_json(const IngestReport& report);
nlohmann::json to_json(const FactorizationCheck& check);
nlohmann::json to_json(const ImpactCurve& curve);
nlohmann::json to_json(const ConstraintResiduals& residuals);
nlohmann::json to_json(const FirmSummary& firm);

}  // namespace impact
