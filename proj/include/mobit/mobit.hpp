#pragma once

#include "mobit/error.hpp"
#include "mobit/model.hpp"
#include "mobit/validator.hpp"
#include "mobit/flow.hpp"
#include "mobit/oracle.hpp"
#include "mobit/docio.hpp"
#include "mobit/wire.hpp"
#include "mobit/server.hpp"
#include "mobit/client.hpp"
#include "mobit/subserver.hpp"
#include "mobit/harness.hpp"
#include "mobit/tcp.hpp"
