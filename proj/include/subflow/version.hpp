#pragma once

#define SUBFLOW_VERSION_MAJOR 0
#define SUBFLOW_VERSION_MINOR 1
#define SUBFLOW_VERSION_PATCH 0
#define SUBFLOW_VERSION_STRING "0.1.0"
