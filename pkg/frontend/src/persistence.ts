// Local profile so a returning student lands back in their session.
// Only the salted key and ids are kept; the email never leaves the login
// form except to the identify endpoint.

export interface Profile {
  studentKey: string;
  sessionId?: string;
}

const KEY = 'baclab.profile';

export function loadProfile(): Profile | null {
  try {
    const raw = localStorage.getItem(KEY);
    return raw ? (JSON.parse(raw) as Profile) : null;
  } catch {
    return null;
  }
}

export function saveProfile(profile: Profile): void {
  try {
    localStorage.setItem(KEY, JSON.stringify(profile));
  } catch {
    // storage full or blocked; the session still works, it just won't resume
  }
}

export function clearProfile(): void {
  try {
    localStorage.removeItem(KEY);
  } catch {
    // ignore
  }
}
