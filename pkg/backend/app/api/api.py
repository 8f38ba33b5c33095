from fastapi import APIRouter

from app.api.endpoints import law, scenarios
from app.core.config import settings

api_router = APIRouter()

api_router.include_router(law.router, prefix="/law", tags=["law"])
api_router.include_router(scenarios.router, prefix="/scenarios", tags=["scenarios"])


# Health check endpoint
@api_router.get("/health")
async def health_check():
    return {"status": "healthy", "message": f"{settings.APP_NAME} API is running"}


@api_router.get("/")
async def root():
    return {
        "message": f"Welcome to the {settings.APP_NAME} API",
        "description": "Embedded-discontinuity fracture simulation with autonomous healing",
        "endpoints": {
            "/law/curve": "Sample the softening-healing traction law",
            "/law/healing-degree": "Healing degree after a rest time",
            "/law/contact-factor": "Contact factor of a released agent",
            "/scenarios": "Bundled scenarios and their variants",
            "/scenarios/{name}/run": "Run a bundled scenario",
        }
    }
