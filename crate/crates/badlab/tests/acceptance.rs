// Acceptance suite lands after the library modules.
