import { App } from './app';
import './style.css';

// The API base URL is the app's entire configuration: same origin by
// default, overridable via <meta name="api-base" content="...">.
const meta = document.querySelector<HTMLMetaElement>('meta[name="api-base"]');
const baseUrl = meta?.content || window.location.origin;

const root = document.getElementById('app');
if (root) {
  const app = new App({ config: { baseUrl }, root });
  void app.boot();
}
