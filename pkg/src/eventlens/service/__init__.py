from .app import create_app
from .sessions import SessionManager, StreamSession

__all__ = ["SessionManager", "StreamSession", "create_app"]
