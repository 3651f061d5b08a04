#pragma once
// Single entry point for the HTTP library so its build knobs are set consistently.

// The library default of 5 drops connection bursts from concurrent clients.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 512
#endif

#include "httplib.h"
