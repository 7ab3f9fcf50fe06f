#pragma once

#include "tiersql/config.hpp"
#include "tiersql/core.hpp"
#include "tiersql/dataset.hpp"
#include "tiersql/error.hpp"
#include "tiersql/gateway.hpp"
#include "tiersql/harness.hpp"
#include "tiersql/http_provider.hpp"
#include "tiersql/labeler.hpp"
#include "tiersql/metrics.hpp"
#include "tiersql/pipelines.hpp"
#include "tiersql/prompts.hpp"
#include "tiersql/report.hpp"
#include "tiersql/routers.hpp"
#include "tiersql/schema_linker.hpp"
#include "tiersql/scorer_client.hpp"
#include "tiersql/sqlexec.hpp"
