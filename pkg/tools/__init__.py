# Tool package initialization
